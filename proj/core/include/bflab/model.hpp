// SPDX-License-Identifier: Apache-2.0
//
// Tiny decoder-only transformer victim. The architecture is deliberately
// minimal but carries all seven attackable weight kinds per layer: the
// attention projections (Query/Key/Value/Output) and the gated MLP
// (Up/Down/Gate). Embeddings, positional table, norm gains and the
// unembedding are trainable but outside the attack surface.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bflab/tensor.hpp"

namespace bflab {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 128;
  int context_len = 64;
  std::uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument on bad dimensions
};

enum class ModuleKind { kQuery, kKey, kValue, kOutput, kUp, kDown, kGate };
inline constexpr int kModuleKindCount = 7;

const char* module_kind_name(ModuleKind kind);
ModuleKind module_kind_from_name(const std::string& name);

// Address of one attackable weight matrix.
struct ModuleId {
  int layer = 0;
  ModuleKind kind = ModuleKind::kQuery;

  friend bool operator==(const ModuleId&, const ModuleId&) = default;
  friend auto operator<=>(const ModuleId&, const ModuleId&) = default;
};

std::string to_string(const ModuleId& id);  // e.g. "L0.Query"

class TinyModel {
 public:
  struct Layer {
    Tensor attn_gain;  // [d]
    Tensor wq, wk, wv, wo;  // [d x d]
    Tensor mlp_gain;   // [d]
    Tensor w_gate, w_up;  // [d x d_ff]
    Tensor w_down;     // [d_ff x d]
  };

  // Seeded random initialization taken from config.seed.
  static TinyModel init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Attack surface: one weight matrix per ModuleId, layer-major, kinds in
  // declaration order. Everything else is off limits to the bit search.
  Tensor& module_weight(const ModuleId& id);
  const Tensor& module_weight(const ModuleId& id) const;
  std::vector<ModuleId> all_modules() const;

  // Every trainable tensor, module weights included.
  std::vector<Tensor> parameters();

  Tensor embedding() const { return embedding_; }
  Tensor pos_embedding() const { return pos_embedding_; }
  Tensor unembedding() const { return unembedding_; }
  Tensor final_gain() const { return final_gain_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Deep copy: fresh storage for every tensor.
  TinyModel clone() const;

 private:
  TinyModel() = default;

  ModelConfig config_;
  Tensor embedding_;      // [vocab x d]
  Tensor pos_embedding_;  // [context x d]
  std::vector<Layer> layers_;
  Tensor final_gain_;     // [d]
  Tensor unembedding_;    // [d x vocab]
};

// Full causal forward pass; one logit row per input position. Gradients flow
// to every parameter recorded on the tape.
Tensor forward_logits(Tape& tape, const TinyModel& model, std::span<const int> ids);

// Inference-only convenience on a throwaway tape.
Tensor forward_logits(const TinyModel& model, std::span<const int> ids);

// Argmax decoding. Returns prompt + generated ids; stops after max_new new
// tokens or right after emitting the end-of-sequence id.
std::vector<int> generate_greedy(const TinyModel& model, std::span<const int> prompt,
                                 int max_new, int eos_id);

struct TrainOptions {
  int steps = 1200;
  double lr = 1e-2;
  int batch = 8;
  int window = 0;  // tokens per sample; 0 means use context_len
  std::uint64_t seed = 7;
};

struct TrainStats {
  double initial_nll = 0.0;
  double final_nll = 0.0;
};

// Next-token training over a token stream. Windows start at the supplied
// offsets (sentence boundaries for the toy corpus). Adam, deterministic for a
// fixed (config, stream, options) triple. Throws std::runtime_error when the
// loss stops being finite.
TinyModel train_toy(const ModelConfig& config, const std::vector<int>& stream,
                    const std::vector<int>& window_starts, const TrainOptions& options,
                    TrainStats* stats = nullptr);

// Gradient of the most recent backward pass for each attackable module.
// Throws std::logic_error if backward has not run over the model's weights.
std::map<ModuleId, Tensor> grad_by_module(const TinyModel& model);

// Checkpoint I/O: magic "TLM1", config as little-endian 32-bit ints (seed as
// 64-bit), then all weights row-major as little-endian IEEE doubles in a
// fixed order (embedding, positional table, per-layer tensors, final gain,
// unembedding).
void save_model(const TinyModel& model, const std::string& path);
TinyModel load_model(const std::string& path);

}  // namespace bflab
