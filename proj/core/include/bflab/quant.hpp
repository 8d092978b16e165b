// SPDX-License-Identifier: Apache-2.0
//
// INT8 and FP4 weight codecs plus targeted bit corruption: quantize, flip a
// chosen bit of a stored code, observe the damage through the dequantized
// float view, and roll back bit-exactly. This is the stand-in for hardware
// fault injection -- corruption hits stored codes, never calibration scales.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bflab/model.hpp"
#include "bflab/tensor.hpp"

namespace bflab {

enum class QuantScheme { kInt8, kFp4 };

const char* scheme_name(QuantScheme scheme);
QuantScheme scheme_from_name(const std::string& name);

// 16-entry code -> value table for the 4-bit float format. Bit 3 is the sign
// bit; bits 2..0 index a magnitude table, so value(code | 8) == -value(code).
class Fp4Lut {
 public:
  // Magnitudes for codes 0..7. Entry 0 must be zero (so the format keeps a
  // signed zero); all entries must be finite and non-negative.
  static Fp4Lut from_magnitudes(const std::array<double, 8>& magnitudes);
  static Fp4Lut defaults();

  double value(int code) const;        // code in [0, 15]
  double max_magnitude() const;
  const std::array<double, 16>& values() const { return values_; }

 private:
  Fp4Lut() = default;
  std::array<double, 16> values_{};
};

// Quantized mirror of one weight matrix: codes plus per-row scales. Codes are
// stored one per byte for both schemes (INT8 signed, FP4 in [0, 15]).
struct QuantizedTensor {
  QuantScheme scheme = QuantScheme::kInt8;
  int rows = 0;
  int cols = 0;
  std::vector<std::int8_t> codes;
  std::vector<double> scales;  // one per row, fixed at quantization time

  std::size_t size() const { return codes.size(); }
};

// Audit record of a single bit flip.
struct FlipRecord {
  ModuleId module;
  std::size_t flat_index = 0;
  int bit_index = 0;  // 0 = least significant bit
  int code_before = 0;
  int code_after = 0;
  double value_before = 0.0;
  double value_after = 0.0;
};

// Per-row symmetric absmax: scale = max|row| / 127 (1.0 for all-zero rows),
// codes rounded and clamped to [-127, 127]. Throws on non-finite input.
QuantizedTensor quantize_int8(const Tensor& w);

// Per-row absmax against the largest LUT magnitude; each weight maps to the
// nearest representable value (ties toward the lower code).
QuantizedTensor quantize_fp4(const Tensor& w, const Fp4Lut& lut);

// code * scale (INT8) or lut[code] * scale (FP4). Throws std::runtime_error
// when a stored code is outside its scheme's valid range.
Tensor dequantize(const QuantizedTensor& q, const Fp4Lut& lut);
double dequantize_one(const QuantizedTensor& q, std::size_t flat_index, const Fp4Lut& lut);

// The bit whose inversion moves the dequantized value furthest: always the
// sign/most-significant bit for INT8; for FP4 a brute-force argmax over the
// four bits under the LUT, ties toward the lower bit index.
int select_flip_bit(int code, QuantScheme scheme, const Fp4Lut& lut);

// XORs one stored code with (1 << bit_index) and reports the damage. The
// record's module field is left for the caller to fill in.
FlipRecord apply_flip(QuantizedTensor& q, std::size_t flat_index, int bit_index,
                      const Fp4Lut& lut);

// Clean copies for the simulate-evaluate-restore loop.
struct QuantSnapshot {
  std::vector<std::int8_t> codes;
  std::vector<double> scales;
};

QuantSnapshot snapshot(const QuantizedTensor& q);
void restore(QuantizedTensor& q, const QuantSnapshot& snap);  // throws std::logic_error on mismatch

// A victim model whose attackable weights live as quantized codes. The float
// model is kept in sync with the codes, so forward passes and gradients see
// exactly what the corrupted weights encode. Non-module parameters
// (embeddings, norm gains, unembedding) stay in float and are untouchable.
class QuantizedModel {
 public:
  QuantizedModel(const TinyModel& source, QuantScheme scheme, const Fp4Lut& lut);

  TinyModel& model() { return model_; }
  const TinyModel& model() const { return model_; }
  QuantScheme scheme() const { return scheme_; }
  const Fp4Lut& lut() const { return lut_; }

  QuantizedTensor& module_codes(const ModuleId& id);
  const QuantizedTensor& module_codes(const ModuleId& id) const;

  // Flips one bit and refreshes the affected float weight. Fills in module.
  FlipRecord flip_bit(const ModuleId& id, std::size_t flat_index, int bit_index);

  // Re-applies a recorded flip; throws std::logic_error if the stored code
  // does not match record.code_before (the search's bookkeeping went stale).
  void reapply(const FlipRecord& record);

  // Rewrites one module's float weights from its codes.
  void sync_module(const ModuleId& id);

  QuantSnapshot snapshot_module(const ModuleId& id) const;
  void restore_module(const ModuleId& id, const QuantSnapshot& snap);

  // FNV-1a over every module's codes and scales, in module order. Changes
  // whenever any stored bit changes; stable across runs.
  std::uint64_t code_checksum() const;

 private:
  TinyModel model_;
  QuantScheme scheme_;
  Fp4Lut lut_;
  std::map<ModuleId, QuantizedTensor> codes_;
};

// Quantized checkpoint: magic "TLQ1", scheme byte, the LUT, the float model
// (embeddings, gains, unembedding), then per-module scales and raw codes,
// all little-endian.
void save_quantized(const QuantizedModel& qm, const std::string& path);
QuantizedModel load_quantized(const std::string& path);

}  // namespace bflab
