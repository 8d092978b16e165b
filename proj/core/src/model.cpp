// SPDX-License-Identifier: Apache-2.0
#include "bflab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "bflab/rng.hpp"
#include "wire.hpp"

namespace bflab {

using wire::read_f64;
using wire::read_u32;
using wire::read_u64;
using wire::write_f64;
using wire::write_u32;
using wire::write_u64;

namespace {

constexpr double kMaskValue = -1e9;

void write_tensor(std::ostream& out, const Tensor& t) {
  for (double v : t.values()) write_f64(out, v);
}

void read_tensor(std::istream& in, Tensor& t) {
  for (double& v : t.values()) v = read_f64(in);
}

Tensor causal_mask(int len) {
  Tensor mask({len, len});
  for (int i = 0; i < len; ++i) {
    for (int j = i + 1; j < len; ++j) mask.at(i, j) = kMaskValue;
  }
  return mask;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("model config: vocab_size must be >= 1");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) {
    throw std::invalid_argument("model config: all dimensions must be >= 1");
  }
  if (context_len < 2) throw std::invalid_argument("model config: context_len must be >= 2");
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model must be divisible by n_heads");
  }
}

const char* module_kind_name(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::kQuery: return "Query";
    case ModuleKind::kKey: return "Key";
    case ModuleKind::kValue: return "Value";
    case ModuleKind::kOutput: return "Output";
    case ModuleKind::kUp: return "Up";
    case ModuleKind::kDown: return "Down";
    case ModuleKind::kGate: return "Gate";
  }
  return "Query";
}

ModuleKind module_kind_from_name(const std::string& name) {
  for (int k = 0; k < kModuleKindCount; ++k) {
    const auto kind = static_cast<ModuleKind>(k);
    if (name == module_kind_name(kind)) return kind;
  }
  throw std::invalid_argument("module kind: unknown name " + name);
}

std::string to_string(const ModuleId& id) {
  return "L" + std::to_string(id.layer) + "." + module_kind_name(id.kind);
}

TinyModel TinyModel::init(const ModelConfig& config) {
  config.validate();
  TinyModel m;
  m.config_ = config;
  Rng rng(config.seed);
  const double w_std = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  const double down_std = 1.0 / std::sqrt(static_cast<double>(config.d_ff));
  m.embedding_ = Tensor::randn({config.vocab_size, config.d_model}, rng, 0.1);
  m.pos_embedding_ = Tensor::randn({config.context_len, config.d_model}, rng, 0.1);
  m.layers_.resize(static_cast<std::size_t>(config.n_layers));
  for (Layer& layer : m.layers_) {
    layer.attn_gain = Tensor::full({config.d_model}, 1.0);
    layer.wq = Tensor::randn({config.d_model, config.d_model}, rng, w_std);
    layer.wk = Tensor::randn({config.d_model, config.d_model}, rng, w_std);
    layer.wv = Tensor::randn({config.d_model, config.d_model}, rng, w_std);
    layer.wo = Tensor::randn({config.d_model, config.d_model}, rng, w_std);
    layer.mlp_gain = Tensor::full({config.d_model}, 1.0);
    layer.w_gate = Tensor::randn({config.d_model, config.d_ff}, rng, w_std);
    layer.w_up = Tensor::randn({config.d_model, config.d_ff}, rng, w_std);
    layer.w_down = Tensor::randn({config.d_ff, config.d_model}, rng, down_std);
  }
  m.final_gain_ = Tensor::full({config.d_model}, 1.0);
  m.unembedding_ = Tensor::randn({config.d_model, config.vocab_size}, rng, w_std);
  return m;
}

Tensor& TinyModel::module_weight(const ModuleId& id) {
  if (id.layer < 0 || id.layer >= config_.n_layers) {
    throw std::invalid_argument("module id: layer out of range");
  }
  Layer& layer = layers_[static_cast<std::size_t>(id.layer)];
  switch (id.kind) {
    case ModuleKind::kQuery: return layer.wq;
    case ModuleKind::kKey: return layer.wk;
    case ModuleKind::kValue: return layer.wv;
    case ModuleKind::kOutput: return layer.wo;
    case ModuleKind::kUp: return layer.w_up;
    case ModuleKind::kDown: return layer.w_down;
    case ModuleKind::kGate: return layer.w_gate;
  }
  throw std::invalid_argument("module id: unknown kind");
}

const Tensor& TinyModel::module_weight(const ModuleId& id) const {
  return const_cast<TinyModel*>(this)->module_weight(id);
}

std::vector<ModuleId> TinyModel::all_modules() const {
  std::vector<ModuleId> ids;
  ids.reserve(static_cast<std::size_t>(config_.n_layers) * kModuleKindCount);
  for (int layer = 0; layer < config_.n_layers; ++layer) {
    for (int k = 0; k < kModuleKindCount; ++k) {
      ids.push_back(ModuleId{layer, static_cast<ModuleKind>(k)});
    }
  }
  return ids;
}

std::vector<Tensor> TinyModel::parameters() {
  std::vector<Tensor> params{embedding_, pos_embedding_};
  for (Layer& layer : layers_) {
    params.insert(params.end(), {layer.attn_gain, layer.wq, layer.wk, layer.wv, layer.wo,
                                 layer.mlp_gain, layer.w_gate, layer.w_up, layer.w_down});
  }
  params.push_back(final_gain_);
  params.push_back(unembedding_);
  return params;
}

TinyModel TinyModel::clone() const {
  TinyModel m;
  m.config_ = config_;
  m.embedding_ = embedding_.clone();
  m.pos_embedding_ = pos_embedding_.clone();
  m.layers_.reserve(layers_.size());
  for (const Layer& layer : layers_) {
    m.layers_.push_back(Layer{layer.attn_gain.clone(), layer.wq.clone(), layer.wk.clone(),
                              layer.wv.clone(), layer.wo.clone(), layer.mlp_gain.clone(),
                              layer.w_gate.clone(), layer.w_up.clone(), layer.w_down.clone()});
  }
  m.final_gain_ = final_gain_.clone();
  m.unembedding_ = unembedding_.clone();
  return m;
}

Tensor forward_logits(Tape& tape, const TinyModel& model, std::span<const int> ids) {
  const ModelConfig& cfg = model.config();
  const int len = static_cast<int>(ids.size());
  if (len < 1) throw std::invalid_argument("forward: empty input");
  if (len > cfg.context_len) throw std::invalid_argument("forward: input longer than context");
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) throw std::invalid_argument("forward: id out of range");
  }
  std::vector<int> positions(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = i;

  Tensor x = add(tape, embedding_gather(tape, model.embedding(), ids),
                 embedding_gather(tape, model.pos_embedding(), positions));
  const int d_head = cfg.d_model / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  const Tensor mask = causal_mask(len);

  for (const TinyModel::Layer& layer : model.layers()) {
    Tensor h = rms_norm(tape, x, layer.attn_gain);
    Tensor q = matmul(tape, h, layer.wq);
    Tensor k = matmul(tape, h, layer.wk);
    Tensor v = matmul(tape, h, layer.wv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int head = 0; head < cfg.n_heads; ++head) {
      Tensor qh = slice_cols(tape, q, head * d_head, d_head);
      Tensor kh = slice_cols(tape, k, head * d_head, d_head);
      Tensor vh = slice_cols(tape, v, head * d_head, d_head);
      Tensor scores = add(tape, mul_scalar(tape, matmul_nt(tape, qh, kh), scale), mask);
      Tensor weights = softmax_rows(tape, scores);
      heads.push_back(matmul(tape, weights, vh));
    }
    Tensor attn = matmul(tape, concat_cols(tape, heads), layer.wo);
    x = add(tape, x, attn);

    Tensor h2 = rms_norm(tape, x, layer.mlp_gain);
    Tensor gated = mul(tape, silu(tape, matmul(tape, h2, layer.w_gate)),
                       matmul(tape, h2, layer.w_up));
    x = add(tape, x, matmul(tape, gated, layer.w_down));
  }
  Tensor normed = rms_norm(tape, x, model.final_gain());
  return matmul(tape, normed, model.unembedding());
}

Tensor forward_logits(const TinyModel& model, std::span<const int> ids) {
  Tape tape;
  return forward_logits(tape, model, ids);
}

std::vector<int> generate_greedy(const TinyModel& model, std::span<const int> prompt,
                                 int max_new, int eos_id) {
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (static_cast<int>(prompt.size()) + max_new > model.config().context_len) {
    throw std::invalid_argument("generate: prompt plus budget exceeds context");
  }
  std::vector<int> seq(prompt.begin(), prompt.end());
  for (int step = 0; step < max_new; ++step) {
    Tensor logits = forward_logits(model, seq);
    const int v = logits.cols();
    const double* last = logits.values().data() + static_cast<std::size_t>(logits.rows() - 1) * v;
    // First maximum wins so ties resolve to the lowest id.
    const int next = static_cast<int>(std::max_element(last, last + v) - last);
    seq.push_back(next);
    if (next == eos_id) break;
  }
  return seq;
}

namespace {

double eval_stream_nll(const TinyModel& model, const std::vector<int>& stream,
                       const std::vector<int>& starts, int window, int max_windows) {
  double total = 0.0;
  int count = 0;
  const int stride = std::max(1, static_cast<int>(starts.size()) / max_windows);
  for (std::size_t i = 0; i < starts.size() && count < max_windows; i += static_cast<std::size_t>(stride)) {
    const int start = starts[i];
    const int len = std::min(window, static_cast<int>(stream.size()) - start - 1);
    if (len < 1) continue;
    std::span<const int> inputs(stream.data() + start, static_cast<std::size_t>(len));
    std::span<const int> targets(stream.data() + start + 1, static_cast<std::size_t>(len));
    Tape tape;
    Tensor logits = forward_logits(tape, model, inputs);
    total += nll_mean(tape, logits, targets).item();
    ++count;
  }
  if (count == 0) throw std::invalid_argument("train: no usable windows");
  return total / count;
}

}  // namespace

TinyModel train_toy(const ModelConfig& config, const std::vector<int>& stream,
                    const std::vector<int>& window_starts, const TrainOptions& options,
                    TrainStats* stats) {
  config.validate();
  if (stream.size() < 2) throw std::invalid_argument("train: stream too short");
  if (window_starts.empty()) throw std::invalid_argument("train: no window starts");
  for (int s : window_starts) {
    if (s < 0 || s + 1 >= static_cast<int>(stream.size())) {
      throw std::invalid_argument("train: window start out of range");
    }
  }
  for (int t : stream) {
    if (t < 0 || t >= config.vocab_size) throw std::invalid_argument("train: token out of range");
  }
  const int window = options.window > 0 ? options.window : config.context_len;

  TinyModel model = TinyModel::init(config);
  std::vector<Tensor> params = model.parameters();
  std::vector<std::vector<double>> m_state, v_state;
  for (Tensor& p : params) {
    m_state.emplace_back(p.size(), 0.0);
    v_state.emplace_back(p.size(), 0.0);
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  if (stats) stats->initial_nll = eval_stream_nll(model, stream, window_starts, window, 16);

  Rng rng(options.seed);
  for (int step = 0; step < options.steps; ++step) {
    Tape tape;
    Tensor total;
    for (int b = 0; b < options.batch; ++b) {
      const int start = window_starts[static_cast<std::size_t>(rng.below(window_starts.size()))];
      const int len = std::min(window, static_cast<int>(stream.size()) - start - 1);
      std::span<const int> inputs(stream.data() + start, static_cast<std::size_t>(len));
      std::span<const int> targets(stream.data() + start + 1, static_cast<std::size_t>(len));
      Tensor logits = forward_logits(tape, model, inputs);
      Tensor nll = nll_mean(tape, logits, targets);
      total = total.defined() ? add(tape, total, nll) : nll;
    }
    Tensor loss = mul_scalar(tape, total, 1.0 / options.batch);
    if (!std::isfinite(loss.item())) throw std::runtime_error("train: loss diverged");
    tape.backward(loss);

    const double t = step + 1;
    const double corr1 = 1.0 - std::pow(kBeta1, t);
    const double corr2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Tensor& p = params[pi];
      if (!p.has_grad()) continue;
      const std::vector<double>& g = p.grad();
      std::vector<double>& m = m_state[pi];
      std::vector<double>& v = v_state[pi];
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        p.values()[i] -= options.lr * (m[i] / corr1) / (std::sqrt(v[i] / corr2) + kEps);
      }
    }
  }
  if (stats) stats->final_nll = eval_stream_nll(model, stream, window_starts, window, 16);
  return model;
}

std::map<ModuleId, Tensor> grad_by_module(const TinyModel& model) {
  std::map<ModuleId, Tensor> grads;
  for (const ModuleId& id : model.all_modules()) {
    const Tensor& w = model.module_weight(id);
    if (!w.has_grad()) {
      throw std::logic_error("grad_by_module: no gradient for " + to_string(id) +
                             "; run backward first");
    }
    grads.emplace(id, w.grad_tensor());
  }
  return grads;
}

void save_model(const TinyModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write("TLM1", 4);
  const ModelConfig& cfg = model.config();
  write_u32(out, static_cast<std::uint32_t>(cfg.vocab_size));
  write_u32(out, static_cast<std::uint32_t>(cfg.d_model));
  write_u32(out, static_cast<std::uint32_t>(cfg.n_layers));
  write_u32(out, static_cast<std::uint32_t>(cfg.n_heads));
  write_u32(out, static_cast<std::uint32_t>(cfg.d_ff));
  write_u32(out, static_cast<std::uint32_t>(cfg.context_len));
  write_u64(out, cfg.seed);
  write_tensor(out, model.embedding());
  write_tensor(out, model.pos_embedding());
  for (const TinyModel::Layer& layer : model.layers()) {
    write_tensor(out, layer.attn_gain);
    write_tensor(out, layer.wq);
    write_tensor(out, layer.wk);
    write_tensor(out, layer.wv);
    write_tensor(out, layer.wo);
    write_tensor(out, layer.mlp_gain);
    write_tensor(out, layer.w_gate);
    write_tensor(out, layer.w_up);
    write_tensor(out, layer.w_down);
  }
  write_tensor(out, model.final_gain());
  write_tensor(out, model.unembedding());
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

TinyModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TLM1", 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(read_u32(in));
  cfg.d_model = static_cast<int>(read_u32(in));
  cfg.n_layers = static_cast<int>(read_u32(in));
  cfg.n_heads = static_cast<int>(read_u32(in));
  cfg.d_ff = static_cast<int>(read_u32(in));
  cfg.context_len = static_cast<int>(read_u32(in));
  cfg.seed = read_u64(in);
  // init() allocates the right shapes; tensor handles share storage, so
  // reading into them fills the model in the documented order.
  TinyModel model = TinyModel::init(cfg);
  Tensor t = model.embedding();
  read_tensor(in, t);
  t = model.pos_embedding();
  read_tensor(in, t);
  for (const TinyModel::Layer& layer : model.layers()) {
    for (Tensor w : {layer.attn_gain, layer.wq, layer.wk, layer.wv, layer.wo, layer.mlp_gain,
                     layer.w_gate, layer.w_up, layer.w_down}) {
      read_tensor(in, w);
    }
  }
  t = model.final_gain();
  read_tensor(in, t);
  t = model.unembedding();
  read_tensor(in, t);
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return model;
}

}  // namespace bflab
