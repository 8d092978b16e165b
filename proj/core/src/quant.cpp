// SPDX-License-Identifier: Apache-2.0
#include "bflab/quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "wire.hpp"

namespace bflab {

using wire::read_f64;
using wire::read_u32;
using wire::read_u64;
using wire::write_f64;
using wire::write_u32;
using wire::write_u64;

namespace {

constexpr int kSignBitFp4 = 3;
constexpr int kSignBitInt8 = 7;

int code_bits(QuantScheme scheme) { return scheme == QuantScheme::kInt8 ? 8 : 4; }

std::int8_t xor_bit(std::int8_t code, int bit_index) {
  const auto raw = static_cast<std::uint8_t>(code);
  return static_cast<std::int8_t>(raw ^ static_cast<std::uint8_t>(1u << bit_index));
}

void check_fp4_code(int code) {
  if (code < 0 || code > 15) throw std::runtime_error("fp4: corrupted code outside [0, 15]");
}

void check_finite(const Tensor& w, const char* op) {
  if (!w.all_finite()) throw std::invalid_argument(std::string(op) + ": non-finite weights");
}

}  // namespace

const char* scheme_name(QuantScheme scheme) {
  return scheme == QuantScheme::kInt8 ? "int8" : "fp4";
}

QuantScheme scheme_from_name(const std::string& name) {
  if (name == "int8") return QuantScheme::kInt8;
  if (name == "fp4") return QuantScheme::kFp4;
  throw std::invalid_argument("scheme: unknown name " + name);
}

Fp4Lut Fp4Lut::from_magnitudes(const std::array<double, 8>& magnitudes) {
  if (magnitudes[0] != 0.0) throw std::invalid_argument("fp4 lut: magnitude 0 must be zero");
  for (double m : magnitudes) {
    if (!std::isfinite(m) || m < 0.0) {
      throw std::invalid_argument("fp4 lut: magnitudes must be finite and non-negative");
    }
  }
  Fp4Lut lut;
  for (int i = 0; i < 8; ++i) {
    lut.values_[static_cast<std::size_t>(i)] = magnitudes[static_cast<std::size_t>(i)];
    lut.values_[static_cast<std::size_t>(i | 8)] = -magnitudes[static_cast<std::size_t>(i)];
  }
  return lut;
}

Fp4Lut Fp4Lut::defaults() {
  return from_magnitudes({0.0, 0.0625, 8.0, 12.0, 4.0, 6.0, 2.0, 3.0});
}

double Fp4Lut::value(int code) const {
  check_fp4_code(code);
  return values_[static_cast<std::size_t>(code)];
}

double Fp4Lut::max_magnitude() const {
  double mx = 0.0;
  for (double v : values_) mx = std::max(mx, std::abs(v));
  return mx;
}

QuantizedTensor quantize_int8(const Tensor& w) {
  check_finite(w, "quantize_int8");
  QuantizedTensor q;
  q.scheme = QuantScheme::kInt8;
  q.rows = w.rows();
  q.cols = w.cols();
  q.codes.resize(w.size());
  q.scales.resize(static_cast<std::size_t>(q.rows));
  for (int r = 0; r < q.rows; ++r) {
    double absmax = 0.0;
    for (int c = 0; c < q.cols; ++c) absmax = std::max(absmax, std::abs(w.at(r, c)));
    const double scale = absmax > 0.0 ? absmax / 127.0 : 1.0;
    q.scales[static_cast<std::size_t>(r)] = scale;
    for (int c = 0; c < q.cols; ++c) {
      const long code = std::lround(w.at(r, c) / scale);
      q.codes[static_cast<std::size_t>(r) * q.cols + c] =
          static_cast<std::int8_t>(std::clamp(code, -127L, 127L));
    }
  }
  return q;
}

QuantizedTensor quantize_fp4(const Tensor& w, const Fp4Lut& lut) {
  check_finite(w, "quantize_fp4");
  QuantizedTensor q;
  q.scheme = QuantScheme::kFp4;
  q.rows = w.rows();
  q.cols = w.cols();
  q.codes.resize(w.size());
  q.scales.resize(static_cast<std::size_t>(q.rows));
  const double top = lut.max_magnitude();
  if (top <= 0.0) throw std::invalid_argument("quantize_fp4: LUT has no nonzero magnitude");
  for (int r = 0; r < q.rows; ++r) {
    double absmax = 0.0;
    for (int c = 0; c < q.cols; ++c) absmax = std::max(absmax, std::abs(w.at(r, c)));
    const double scale = absmax > 0.0 ? absmax / top : 1.0;
    q.scales[static_cast<std::size_t>(r)] = scale;
    for (int c = 0; c < q.cols; ++c) {
      const double target = w.at(r, c) / scale;
      int best = 0;
      double best_err = std::abs(lut.value(0) - target);
      for (int code = 1; code < 16; ++code) {
        const double err = std::abs(lut.value(code) - target);
        if (err < best_err) {
          best = code;
          best_err = err;
        }
      }
      q.codes[static_cast<std::size_t>(r) * q.cols + c] = static_cast<std::int8_t>(best);
    }
  }
  return q;
}

double dequantize_one(const QuantizedTensor& q, std::size_t flat_index, const Fp4Lut& lut) {
  if (flat_index >= q.size()) throw std::invalid_argument("dequantize: index out of range");
  const double scale = q.scales[flat_index / static_cast<std::size_t>(q.cols)];
  const int code = q.codes[flat_index];
  if (q.scheme == QuantScheme::kInt8) return static_cast<double>(code) * scale;
  check_fp4_code(code);
  return lut.value(code) * scale;
}

Tensor dequantize(const QuantizedTensor& q, const Fp4Lut& lut) {
  Tensor out({q.rows, q.cols});
  for (std::size_t i = 0; i < q.size(); ++i) out.values()[i] = dequantize_one(q, i, lut);
  return out;
}

int select_flip_bit(int code, QuantScheme scheme, const Fp4Lut& lut) {
  if (scheme == QuantScheme::kInt8) return kSignBitInt8;
  check_fp4_code(code);
  int best_bit = 0;
  double best_delta = -1.0;
  for (int bit = 0; bit < 4; ++bit) {
    const double delta = std::abs(lut.value(code ^ (1 << bit)) - lut.value(code));
    if (delta > best_delta) {
      best_delta = delta;
      best_bit = bit;
    }
  }
  return best_bit;
}

FlipRecord apply_flip(QuantizedTensor& q, std::size_t flat_index, int bit_index,
                      const Fp4Lut& lut) {
  if (flat_index >= q.size()) throw std::invalid_argument("apply_flip: index out of range");
  if (bit_index < 0 || bit_index >= code_bits(q.scheme)) {
    throw std::invalid_argument("apply_flip: bit index out of range for scheme");
  }
  FlipRecord rec;
  rec.flat_index = flat_index;
  rec.bit_index = bit_index;
  rec.code_before = q.codes[flat_index];
  rec.value_before = dequantize_one(q, flat_index, lut);
  q.codes[flat_index] = xor_bit(q.codes[flat_index], bit_index);
  rec.code_after = q.codes[flat_index];
  rec.value_after = dequantize_one(q, flat_index, lut);
  return rec;
}

QuantSnapshot snapshot(const QuantizedTensor& q) { return QuantSnapshot{q.codes, q.scales}; }

void restore(QuantizedTensor& q, const QuantSnapshot& snap) {
  if (snap.codes.size() != q.codes.size() || snap.scales.size() != q.scales.size()) {
    throw std::logic_error("restore: snapshot shape does not match tensor");
  }
  q.codes = snap.codes;
  q.scales = snap.scales;
}

QuantizedModel::QuantizedModel(const TinyModel& source, QuantScheme scheme, const Fp4Lut& lut)
    : model_(source.clone()), scheme_(scheme), lut_(lut) {
  for (const ModuleId& id : model_.all_modules()) {
    const Tensor& w = model_.module_weight(id);
    codes_.emplace(id, scheme == QuantScheme::kInt8 ? quantize_int8(w) : quantize_fp4(w, lut_));
    // The float view now shows the rounded weights the codes actually encode.
    sync_module(id);
  }
}

QuantizedTensor& QuantizedModel::module_codes(const ModuleId& id) {
  auto it = codes_.find(id);
  if (it == codes_.end()) throw std::invalid_argument("quantized model: unknown module");
  return it->second;
}

const QuantizedTensor& QuantizedModel::module_codes(const ModuleId& id) const {
  return const_cast<QuantizedModel*>(this)->module_codes(id);
}

FlipRecord QuantizedModel::flip_bit(const ModuleId& id, std::size_t flat_index, int bit_index) {
  QuantizedTensor& q = module_codes(id);
  FlipRecord rec = apply_flip(q, flat_index, bit_index, lut_);
  rec.module = id;
  Tensor w = model_.module_weight(id);
  w.values()[flat_index] = rec.value_after;
  return rec;
}

void QuantizedModel::reapply(const FlipRecord& record) {
  QuantizedTensor& q = module_codes(record.module);
  if (record.flat_index >= q.size()) throw std::invalid_argument("reapply: index out of range");
  if (q.codes[record.flat_index] != static_cast<std::int8_t>(record.code_before)) {
    throw std::logic_error("reapply: stored code does not match the record");
  }
  FlipRecord redo = flip_bit(record.module, record.flat_index, record.bit_index);
  if (redo.code_after != record.code_after) {
    throw std::logic_error("reapply: flip produced a different code than recorded");
  }
}

void QuantizedModel::sync_module(const ModuleId& id) {
  const QuantizedTensor& q = module_codes(id);
  Tensor w = model_.module_weight(id);
  for (std::size_t i = 0; i < q.size(); ++i) w.values()[i] = dequantize_one(q, i, lut_);
}

QuantSnapshot QuantizedModel::snapshot_module(const ModuleId& id) const {
  return snapshot(module_codes(id));
}

void QuantizedModel::restore_module(const ModuleId& id, const QuantSnapshot& snap) {
  restore(module_codes(id), snap);
  sync_module(id);
}

std::uint64_t QuantizedModel::code_checksum() const {
  std::uint64_t hash = 14695981039346656037ull;
  auto mix = [&hash](std::uint8_t byte) {
    hash ^= byte;
    hash *= 1099511628211ull;
  };
  for (const ModuleId& id : model_.all_modules()) {
    const QuantizedTensor& q = codes_.at(id);
    for (std::int8_t code : q.codes) mix(static_cast<std::uint8_t>(code));
    for (double scale : q.scales) {
      const auto bits = std::bit_cast<std::uint64_t>(scale);
      for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
    }
  }
  return hash;
}

namespace {

void write_float_tensor(std::ostream& out, const Tensor& t) {
  for (double v : t.values()) write_f64(out, v);
}

void read_float_tensor(std::istream& in, Tensor t) {
  for (double& v : t.values()) v = read_f64(in);
}

}  // namespace

void save_quantized(const QuantizedModel& qm, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write("TLQ1", 4);
  out.put(qm.scheme() == QuantScheme::kInt8 ? 0 : 1);
  for (int i = 0; i < 8; ++i) write_f64(out, qm.lut().value(i));
  const TinyModel& model = qm.model();
  const ModelConfig& cfg = model.config();
  write_u32(out, static_cast<std::uint32_t>(cfg.vocab_size));
  write_u32(out, static_cast<std::uint32_t>(cfg.d_model));
  write_u32(out, static_cast<std::uint32_t>(cfg.n_layers));
  write_u32(out, static_cast<std::uint32_t>(cfg.n_heads));
  write_u32(out, static_cast<std::uint32_t>(cfg.d_ff));
  write_u32(out, static_cast<std::uint32_t>(cfg.context_len));
  write_u64(out, cfg.seed);
  write_float_tensor(out, model.embedding());
  write_float_tensor(out, model.pos_embedding());
  for (const TinyModel::Layer& layer : model.layers()) {
    write_float_tensor(out, layer.attn_gain);
    write_float_tensor(out, layer.mlp_gain);
  }
  write_float_tensor(out, model.final_gain());
  write_float_tensor(out, model.unembedding());
  for (const ModuleId& id : model.all_modules()) {
    const QuantizedTensor& q = qm.module_codes(id);
    write_u32(out, static_cast<std::uint32_t>(q.rows));
    write_u32(out, static_cast<std::uint32_t>(q.cols));
    for (double s : q.scales) write_f64(out, s);
    out.write(reinterpret_cast<const char*>(q.codes.data()),
              static_cast<std::streamsize>(q.codes.size()));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

QuantizedModel load_quantized(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TLQ1", 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const int scheme_byte = in.get();
  if (scheme_byte != 0 && scheme_byte != 1) {
    throw std::runtime_error("checkpoint: bad scheme byte in " + path);
  }
  const QuantScheme scheme = scheme_byte == 0 ? QuantScheme::kInt8 : QuantScheme::kFp4;
  std::array<double, 8> mags{};
  for (double& m : mags) m = read_f64(in);
  const Fp4Lut lut = Fp4Lut::from_magnitudes(mags);
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(read_u32(in));
  cfg.d_model = static_cast<int>(read_u32(in));
  cfg.n_layers = static_cast<int>(read_u32(in));
  cfg.n_heads = static_cast<int>(read_u32(in));
  cfg.d_ff = static_cast<int>(read_u32(in));
  cfg.context_len = static_cast<int>(read_u32(in));
  cfg.seed = read_u64(in);
  TinyModel base = TinyModel::init(cfg);
  read_float_tensor(in, base.embedding());
  read_float_tensor(in, base.pos_embedding());
  for (const TinyModel::Layer& layer : base.layers()) {
    read_float_tensor(in, layer.attn_gain);
    read_float_tensor(in, layer.mlp_gain);
  }
  read_float_tensor(in, base.final_gain());
  read_float_tensor(in, base.unembedding());

  QuantizedModel qm(base, scheme, lut);
  for (const ModuleId& id : qm.model().all_modules()) {
    QuantizedTensor& q = qm.module_codes(id);
    const int rows = static_cast<int>(read_u32(in));
    const int cols = static_cast<int>(read_u32(in));
    if (rows != q.rows || cols != q.cols) {
      throw std::runtime_error("checkpoint: module shape mismatch in " + path);
    }
    for (double& s : q.scales) s = read_f64(in);
    in.read(reinterpret_cast<char*>(q.codes.data()),
            static_cast<std::streamsize>(q.codes.size()));
    qm.sync_module(id);
  }
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return qm;
}

}  // namespace bflab
