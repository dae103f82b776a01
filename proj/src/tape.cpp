#include "rf4d/tape.hpp"

#include <cmath>
#include <numbers>

namespace rf4d::diffcore {
namespace {

constexpr std::uint64_t kPrimeY = 2654435761ull;
constexpr std::uint64_t kPrimeZ = 805459861ull;

inline std::uint64_t corner_hash(std::uint64_t ix, std::uint64_t iy, std::uint64_t iz, int table_size) {
  return (ix ^ (iy * kPrimeY) ^ (iz * kPrimeZ)) & static_cast<std::uint64_t>(table_size - 1);
}

struct LevelInterp {
  int cell[3];
  double frac[3];
  bool live[3];  // axis gradient survives (query not clamped on this axis)
};

LevelInterp level_interp(const double* x, int resolution) {
  LevelInterp out;
  for (int a = 0; a < 3; ++a) {
    const double clamped = std::clamp(x[a], -1.0, 1.0);
    out.live[a] = x[a] >= -1.0 && x[a] <= 1.0;
    const double g = (clamped + 1.0) * 0.5 * resolution;
    int c = static_cast<int>(std::floor(g));
    c = std::clamp(c, 0, resolution - 1);
    out.cell[a] = c;
    out.frac[a] = std::clamp(g - c, 0.0, 1.0);
  }
  return out;
}

}  // namespace

int hash_level_resolution(int n_min, double growth, int level) {
  return static_cast<int>(std::floor(n_min * std::pow(growth, level)));
}

void hash_level_eval(std::span<const double> table, int table_size, int features, int resolution,
                     const double* x, double* out) {
  const LevelInterp interp = level_interp(x, resolution);
  for (int corner = 0; corner < 8; ++corner) {
    const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
    const double w = (bx ? interp.frac[0] : 1.0 - interp.frac[0]) * (by ? interp.frac[1] : 1.0 - interp.frac[1]) *
                     (bz ? interp.frac[2] : 1.0 - interp.frac[2]);
    if (w == 0.0) continue;
    const std::uint64_t h = corner_hash(static_cast<std::uint64_t>(interp.cell[0] + bx),
                                        static_cast<std::uint64_t>(interp.cell[1] + by),
                                        static_cast<std::uint64_t>(interp.cell[2] + bz), table_size);
    const double* row = table.data() + h * static_cast<std::uint64_t>(features);
    for (int f = 0; f < features; ++f) out[f] += w * row[f];
  }
}

namespace {

// Real spherical harmonics, band-1 pattern (-y, z, -x); degree <= 3.
constexpr double kSh0 = 0.28209479177387814;
constexpr double kSh1 = 0.4886025119029199;
constexpr double kSh20 = 1.0925484305920792;
constexpr double kSh21 = 0.31539156525252005;
constexpr double kSh22 = 0.5462742152960396;
constexpr double kSh30 = 0.5900435899266435;
constexpr double kSh31 = 2.890611442640554;
constexpr double kSh32 = 0.4570457994644658;
constexpr double kSh33 = 0.3731763325901154;
constexpr double kSh34 = 1.445305721320277;

}  // namespace

void sh_basis_unit(const double* n, int degree, double* out) {
  const double x = n[0], y = n[1], z = n[2];
  out[0] = kSh0;
  if (degree < 1) return;
  out[1] = -kSh1 * y;
  out[2] = kSh1 * z;
  out[3] = -kSh1 * x;
  if (degree < 2) return;
  out[4] = kSh20 * x * y;
  out[5] = -kSh20 * y * z;
  out[6] = kSh21 * (3.0 * z * z - 1.0);
  out[7] = -kSh20 * x * z;
  out[8] = kSh22 * (x * x - y * y);
  if (degree < 3) return;
  out[9] = -kSh30 * y * (3.0 * x * x - y * y);
  out[10] = kSh31 * x * y * z;
  out[11] = -kSh32 * y * (5.0 * z * z - 1.0);
  out[12] = kSh33 * z * (5.0 * z * z - 3.0);
  out[13] = -kSh32 * x * (5.0 * z * z - 1.0);
  out[14] = kSh34 * z * (x * x - y * y);
  out[15] = -kSh30 * x * (x * x - 3.0 * y * y);
}

namespace {

/// d(basis_i)/d(n) accumulated as grad_n += sum_i dy_i * grad(basis_i).
void sh_basis_backward(const double* n, int degree, const double* dy, double* grad_n) {
  const double x = n[0], y = n[1], z = n[2];
  // degree 0: constant
  if (degree < 1) return;
  grad_n[1] += -kSh1 * dy[1];
  grad_n[2] += kSh1 * dy[2];
  grad_n[0] += -kSh1 * dy[3];
  if (degree < 2) return;
  grad_n[0] += kSh20 * y * dy[4];
  grad_n[1] += kSh20 * x * dy[4];
  grad_n[1] += -kSh20 * z * dy[5];
  grad_n[2] += -kSh20 * y * dy[5];
  grad_n[2] += 6.0 * kSh21 * z * dy[6];
  grad_n[0] += -kSh20 * z * dy[7];
  grad_n[2] += -kSh20 * x * dy[7];
  grad_n[0] += 2.0 * kSh22 * x * dy[8];
  grad_n[1] += -2.0 * kSh22 * y * dy[8];
  if (degree < 3) return;
  grad_n[0] += -kSh30 * 6.0 * x * y * dy[9];
  grad_n[1] += -kSh30 * (3.0 * x * x - 3.0 * y * y) * dy[9];
  grad_n[0] += kSh31 * y * z * dy[10];
  grad_n[1] += kSh31 * x * z * dy[10];
  grad_n[2] += kSh31 * x * y * dy[10];
  grad_n[1] += -kSh32 * (5.0 * z * z - 1.0) * dy[11];
  grad_n[2] += -kSh32 * 10.0 * y * z * dy[11];
  grad_n[2] += kSh33 * (15.0 * z * z - 3.0) * dy[12];
  grad_n[0] += -kSh32 * (5.0 * z * z - 1.0) * dy[13];
  grad_n[2] += -kSh32 * 10.0 * x * z * dy[13];
  grad_n[0] += 2.0 * kSh34 * x * z * dy[14];
  grad_n[1] += -2.0 * kSh34 * y * z * dy[14];
  grad_n[2] += kSh34 * (x * x - y * y) * dy[14];
  grad_n[0] += -kSh30 * (3.0 * x * x - 3.0 * y * y) * dy[15];
  grad_n[1] += kSh30 * 6.0 * x * y * dy[15];
}

}  // namespace

const Tape::Node& Tape::node_at(NodeId id) const {
  if (id.index < 0 || id.index >= node_count()) throw IndexError("Tape: node id out of range");
  return nodes_[static_cast<std::size_t>(id.index)];
}

std::span<const double> Tape::value(NodeId id) const {
  const Node& node = node_at(id);
  return {vals_.data() + node.val_ofs, static_cast<std::size_t>(node.val_size)};
}

double Tape::scalar(NodeId id) const {
  const Node& node = node_at(id);
  if (node.val_size != 1) throw ShapeError("Tape::scalar: node is not scalar");
  return vals_[static_cast<std::size_t>(node.val_ofs)];
}

NodeId Tape::push(Op op, std::span<const NodeId> inputs, int out_size, std::span<const double> aux,
                  std::span<const int> iaux) {
  Node node;
  node.op = op;
  node.in_ofs = static_cast<int>(inputs_.size());
  node.in_count = static_cast<int>(inputs.size());
  for (NodeId in : inputs) {
    node_at(in);  // bounds check
    inputs_.push_back(in.index);
  }
  node.val_ofs = static_cast<int>(vals_.size());
  node.val_size = out_size;
  vals_.resize(vals_.size() + static_cast<std::size_t>(out_size), 0.0);
  node.aux_ofs = static_cast<int>(aux_.size());
  node.aux_count = static_cast<int>(aux.size());
  aux_.insert(aux_.end(), aux.begin(), aux.end());
  node.iaux_ofs = static_cast<int>(iaux_.size());
  node.iaux_count = static_cast<int>(iaux.size());
  iaux_.insert(iaux_.end(), iaux.begin(), iaux.end());
  nodes_.push_back(node);
  return {node_count() - 1};
}

NodeId Tape::input(std::span<const double> values) {
  const NodeId id = push(Op::kInput, {}, static_cast<int>(values.size()));
  std::copy(values.begin(), values.end(), vals_.begin() + node_at(id).val_ofs);
  return id;
}

NodeId Tape::input_scalar(double value) { return input({&value, 1}); }

NodeId Tape::affine(int w_block, int b_block, NodeId x) {
  const auto& w_shape = store_->shape(w_block);
  const auto& b_shape = store_->shape(b_block);
  if (w_shape.size() != 2) throw ShapeError("Tape::affine: weight block must be 2-D");
  const int out = w_shape[0], in = w_shape[1];
  if (b_shape.size() != 1 || b_shape[0] != out) throw ShapeError("Tape::affine: bias shape mismatch");
  if (node_at(x).val_size != in)
    throw ShapeError("Tape::affine: input width " + std::to_string(node_at(x).val_size) + ", expected " +
                     std::to_string(in));

  const int iaux[2] = {w_block, b_block};
  const NodeId id = push(Op::kAffine, {{x}}, out, {}, iaux);
  const Node& node = nodes_.back();
  const double* xv = vals_.data() + node_at(x).val_ofs;
  const auto wv = store_->values(w_block);
  const auto bv = store_->values(b_block);
  double* yv = vals_.data() + node.val_ofs;
  for (int i = 0; i < out; ++i) {
    double acc = bv[i];
    const double* row = wv.data() + static_cast<std::size_t>(i) * in;
    for (int j = 0; j < in; ++j) acc += row[j] * xv[j];
    yv[i] = acc;
  }
  return id;
}

NodeId Tape::relu(NodeId x) {
  const int size = node_at(x).val_size;
  const NodeId id = push(Op::kRelu, {{x}}, size);
  const double* xv = vals_.data() + node_at(x).val_ofs;
  double* yv = vals_.data() + nodes_.back().val_ofs;
  for (int i = 0; i < size; ++i) yv[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return id;
}

NodeId Tape::concat(NodeId a, NodeId b) {
  const int na = node_at(a).val_size, nb = node_at(b).val_size;
  const NodeId ins[2] = {a, b};
  const NodeId id = push(Op::kConcat, ins, na + nb);
  double* yv = vals_.data() + nodes_.back().val_ofs;
  std::copy_n(vals_.data() + node_at(a).val_ofs, na, yv);
  std::copy_n(vals_.data() + node_at(b).val_ofs, nb, yv + na);
  return id;
}

NodeId Tape::slice(NodeId x, int offset, int size) {
  const int n = node_at(x).val_size;
  if (offset < 0 || size < 1 || offset + size > n) throw ShapeError("Tape::slice: range out of bounds");
  const int iaux[1] = {offset};
  const NodeId id = push(Op::kSlice, {{x}}, size, {}, iaux);
  std::copy_n(vals_.data() + node_at(x).val_ofs + offset, size, vals_.data() + nodes_.back().val_ofs);
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  const int n = node_at(a).val_size;
  if (node_at(b).val_size != n) throw ShapeError("Tape::add: size mismatch");
  const NodeId ins[2] = {a, b};
  const NodeId id = push(Op::kAdd, ins, n);
  const double* av = vals_.data() + node_at(a).val_ofs;
  const double* bv = vals_.data() + node_at(b).val_ofs;
  double* yv = vals_.data() + nodes_.back().val_ofs;
  for (int i = 0; i < n; ++i) yv[i] = av[i] + bv[i];
  return id;
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const int n = node_at(a).val_size;
  if (node_at(b).val_size != n) throw ShapeError("Tape::sub: size mismatch");
  const NodeId ins[2] = {a, b};
  const NodeId id = push(Op::kSub, ins, n);
  const double* av = vals_.data() + node_at(a).val_ofs;
  const double* bv = vals_.data() + node_at(b).val_ofs;
  double* yv = vals_.data() + nodes_.back().val_ofs;
  for (int i = 0; i < n; ++i) yv[i] = av[i] - bv[i];
  return id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const int n = node_at(a).val_size;
  if (node_at(b).val_size != n) throw ShapeError("Tape::mul: size mismatch");
  const NodeId ins[2] = {a, b};
  const NodeId id = push(Op::kMul, ins, n);
  const double* av = vals_.data() + node_at(a).val_ofs;
  const double* bv = vals_.data() + node_at(b).val_ofs;
  double* yv = vals_.data() + nodes_.back().val_ofs;
  for (int i = 0; i < n; ++i) yv[i] = av[i] * bv[i];
  return id;
}

NodeId Tape::square(NodeId x) {
  const int n = node_at(x).val_size;
  const NodeId id = push(Op::kSquare, {{x}}, n);
  const double* xv = vals_.data() + node_at(x).val_ofs;
  double* yv = vals_.data() + nodes_.back().val_ofs;
  for (int i = 0; i < n; ++i) yv[i] = xv[i] * xv[i];
  return id;
}

NodeId Tape::scale(NodeId x, double factor) {
  const int n = node_at(x).val_size;
  const double aux[1] = {factor};
  const NodeId id = push(Op::kScale, {{x}}, n, aux);
  const double* xv = vals_.data() + node_at(x).val_ofs;
  double* yv = vals_.data() + nodes_.back().val_ofs;
  for (int i = 0; i < n; ++i) yv[i] = factor * xv[i];
  return id;
}

NodeId Tape::sum(NodeId x) {
  const int n = node_at(x).val_size;
  const NodeId id = push(Op::kSum, {{x}}, 1);
  const double* xv = vals_.data() + node_at(x).val_ofs;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += xv[i];
  vals_[static_cast<std::size_t>(nodes_.back().val_ofs)] = acc;
  return id;
}

NodeId Tape::mean_many(std::span<const NodeId> xs) {
  if (xs.empty()) throw DomainError("Tape::mean_many: no inputs");
  for (NodeId x : xs)
    if (node_at(x).val_size != 1) throw ShapeError("Tape::mean_many: inputs must be scalar");
  const NodeId id = push(Op::kMeanMany, xs, 1);
  double acc = 0.0;
  const Node& node = nodes_.back();
  for (int i = 0; i < node.in_count; ++i) acc += vals_[static_cast<std::size_t>(nodes_[inputs_[node.in_ofs + i]].val_ofs)];
  vals_[static_cast<std::size_t>(node.val_ofs)] = acc / node.in_count;
  return id;
}

NodeId Tape::exp(NodeId x) {
  const int n = node_at(x).val_size;
  const NodeId id = push(Op::kExp, {{x}}, n);
  const double* xv = vals_.data() + node_at(x).val_ofs;
  double* yv = vals_.data() + nodes_.back().val_ofs;
  for (int i = 0; i < n; ++i) yv[i] = std::exp(xv[i]);
  return id;
}

NodeId Tape::norm2(NodeId x) {
  const int n = node_at(x).val_size;
  const NodeId id = push(Op::kNorm2, {{x}}, 1);
  const double* xv = vals_.data() + node_at(x).val_ofs;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += xv[i] * xv[i];
  vals_[static_cast<std::size_t>(nodes_.back().val_ofs)] = std::sqrt(acc);
  return id;
}

NodeId Tape::sigmoid_t(NodeId x, std::span<const double> noise, double tau) {
  const int n = node_at(x).val_size;
  if (static_cast<int>(noise.size()) != n) throw ShapeError("Tape::sigmoid_t: noise size mismatch");
  if (!(tau > 0.0)) throw DomainError("Tape::sigmoid_t: tau must be positive");
  std::vector<double> aux;
  aux.reserve(noise.size() + 1);
  aux.push_back(tau);
  aux.insert(aux.end(), noise.begin(), noise.end());
  const NodeId id = push(Op::kSigmoidT, {{x}}, n, aux);
  const double* xv = vals_.data() + node_at(x).val_ofs;
  double* yv = vals_.data() + nodes_.back().val_ofs;
  for (int i = 0; i < n; ++i) yv[i] = 1.0 / (1.0 + std::exp(-(xv[i] + noise[i]) / tau));
  return id;
}

NodeId Tape::render_power_raw(NodeId alpha, NodeId s_raw, double delta_m) {
  if (node_at(alpha).val_size != 1 || node_at(s_raw).val_size != 1)
    throw ShapeError("Tape::render_power_raw: inputs must be scalar");
  if (!(delta_m > 0.0)) throw DomainError("Tape::render_power_raw: delta must be positive");
  const double aux[1] = {delta_m};
  const NodeId ins[2] = {alpha, s_raw};
  const NodeId id = push(Op::kRenderPower, ins, 1, aux);
  const double a = vals_[static_cast<std::size_t>(node_at(alpha).val_ofs)];
  const double s = vals_[static_cast<std::size_t>(node_at(s_raw).val_ofs)];
  const double log10_sigma_over_d2 = (s - 2.0 * std::log(delta_m)) / std::numbers::ln10;
  vals_[static_cast<std::size_t>(nodes_.back().val_ofs)] = a * log10_sigma_over_d2;
  return id;
}

NodeId Tape::hash_encode(NodeId x, const HashTapeSpec& spec) {
  if (node_at(x).val_size != 3) throw ShapeError("Tape::hash_encode: input must be a 3-point");
  const int levels = static_cast<int>(spec.level_blocks.size());
  if (levels < 1) throw ValidationError("Tape::hash_encode: need at least one level");
  if (spec.table_size < 2 || (spec.table_size & (spec.table_size - 1)) != 0)
    throw ValidationError("Tape::hash_encode: table_size must be a power of two >= 2");
  for (int block : spec.level_blocks) {
    const auto& shape = store_->shape(block);
    if (shape.size() != 2 || shape[0] != spec.table_size || shape[1] != spec.features)
      throw ShapeError("Tape::hash_encode: level block shape must be [table_size, features]");
  }

  std::vector<int> iaux;
  iaux.reserve(3 + spec.level_blocks.size());
  iaux.push_back(spec.table_size);
  iaux.push_back(spec.features);
  iaux.push_back(spec.n_min);
  iaux.insert(iaux.end(), spec.level_blocks.begin(), spec.level_blocks.end());
  const double aux[1] = {spec.growth};
  const NodeId id = push(Op::kHashEncode, {{x}}, levels * spec.features, aux, iaux);

  const Node& node = nodes_.back();
  const double* xv = vals_.data() + node_at(x).val_ofs;
  if (xv[0] < -1.0 || xv[0] > 1.0 || xv[1] < -1.0 || xv[1] > 1.0 || xv[2] < -1.0 || xv[2] > 1.0)
    store_->clamp_warnings.fetch_add(1, std::memory_order_relaxed);

  double* yv = vals_.data() + node.val_ofs;
  for (int level = 0; level < levels; ++level) {
    const int resolution = hash_level_resolution(spec.n_min, spec.growth, level);
    const auto table = store_->values(spec.level_blocks[static_cast<std::size_t>(level)]);
    double* out = yv + static_cast<std::size_t>(level) * spec.features;
    std::fill_n(out, spec.features, 0.0);
    hash_level_eval(table, spec.table_size, spec.features, resolution, xv, out);
  }
  return id;
}

NodeId Tape::sinusoid(NodeId t, int frequencies) {
  if (node_at(t).val_size != 1) throw ShapeError("Tape::sinusoid: input must be scalar");
  if (frequencies < 1) throw ValidationError("Tape::sinusoid: need at least one frequency");
  const int iaux[1] = {frequencies};
  const NodeId id = push(Op::kSinusoid, {{t}}, 2 * frequencies, {}, iaux);
  const double tv = vals_[static_cast<std::size_t>(node_at(t).val_ofs)];
  double* yv = vals_.data() + nodes_.back().val_ofs;
  for (int k = 0; k < frequencies; ++k) {
    const double omega = std::pow(2.0, k) * std::numbers::pi;
    yv[2 * k] = std::sin(omega * tv);
    yv[2 * k + 1] = std::cos(omega * tv);
  }
  return id;
}

NodeId Tape::sh_encode(NodeId d, int degree) {
  if (node_at(d).val_size != 3) throw ShapeError("Tape::sh_encode: input must be a 3-vector");
  if (degree < 0 || degree > 3) throw DomainError("Tape::sh_encode: degree must be in 0..3");
  // copy before push: recording may reallocate the value arena
  double dv[3];
  std::copy_n(vals_.data() + node_at(d).val_ofs, 3, dv);
  const double norm = std::sqrt(dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2]);
  if (norm < 0.5) throw DegenerateError("Tape::sh_encode: direction norm below 0.5");
  const int iaux[1] = {degree};
  const NodeId id = push(Op::kShEncode, {{d}}, (degree + 1) * (degree + 1), {}, iaux);
  const double n[3] = {dv[0] / norm, dv[1] / norm, dv[2] / norm};
  sh_basis_unit(n, degree, vals_.data() + nodes_.back().val_ofs);
  return id;
}

void Tape::backward(NodeId root) {
  const Node& root_node = node_at(root);
  if (root_node.val_size != 1) throw ValidationError("Tape::backward: root must be scalar");
  grads_.assign(vals_.size(), 0.0);
  grads_[static_cast<std::size_t>(root_node.val_ofs)] = 1.0;
  for (int i = root.index; i >= 0; --i) backward_node(nodes_[static_cast<std::size_t>(i)]);
}

void Tape::backward_node(const Node& node) {
  const double* dy = grads_.data() + node.val_ofs;
  const int n = node.val_size;
  auto in_node = [&](int slot) -> const Node& { return nodes_[static_cast<std::size_t>(inputs_[node.in_ofs + slot])]; };
  auto in_vals = [&](int slot) { return vals_.data() + in_node(slot).val_ofs; };
  auto in_grads = [&](int slot) { return grads_.data() + in_node(slot).val_ofs; };

  switch (node.op) {
    case Op::kInput:
      break;
    case Op::kAffine: {
      bool any = false;
      for (int i = 0; i < n && !any; ++i) any = dy[i] != 0.0;
      if (!any) break;
      const int w_block = iaux_[node.iaux_ofs];
      const int b_block = iaux_[node.iaux_ofs + 1];
      const int in = in_node(0).val_size;
      const double* xv = in_vals(0);
      double* dx = in_grads(0);
      auto wv = store_->values(w_block);
      auto dw = store_->grads(w_block);
      auto db = store_->grads(b_block);
      for (int i = 0; i < n; ++i) {
        const double g = dy[i];
        if (g == 0.0) continue;
        db[i] += g;
        const double* row = wv.data() + static_cast<std::size_t>(i) * in;
        double* drow = dw.data() + static_cast<std::size_t>(i) * in;
        for (int j = 0; j < in; ++j) {
          drow[j] += g * xv[j];
          dx[j] += g * row[j];
        }
      }
      break;
    }
    case Op::kRelu: {
      const double* xv = in_vals(0);
      double* dx = in_grads(0);
      for (int i = 0; i < n; ++i)
        if (xv[i] > 0.0) dx[i] += dy[i];
      break;
    }
    case Op::kConcat: {
      const int na = in_node(0).val_size;
      double* da = in_grads(0);
      double* db = in_grads(1);
      for (int i = 0; i < na; ++i) da[i] += dy[i];
      for (int i = na; i < n; ++i) db[i - na] += dy[i];
      break;
    }
    case Op::kSlice: {
      const int offset = iaux_[node.iaux_ofs];
      double* dx = in_grads(0);
      for (int i = 0; i < n; ++i) dx[offset + i] += dy[i];
      break;
    }
    case Op::kAdd: {
      double* da = in_grads(0);
      double* db = in_grads(1);
      for (int i = 0; i < n; ++i) {
        da[i] += dy[i];
        db[i] += dy[i];
      }
      break;
    }
    case Op::kSub: {
      double* da = in_grads(0);
      double* db = in_grads(1);
      for (int i = 0; i < n; ++i) {
        da[i] += dy[i];
        db[i] -= dy[i];
      }
      break;
    }
    case Op::kMul: {
      const double* av = in_vals(0);
      const double* bv = in_vals(1);
      double* da = in_grads(0);
      double* db = in_grads(1);
      for (int i = 0; i < n; ++i) {
        da[i] += dy[i] * bv[i];
        db[i] += dy[i] * av[i];
      }
      break;
    }
    case Op::kSquare: {
      const double* xv = in_vals(0);
      double* dx = in_grads(0);
      for (int i = 0; i < n; ++i) dx[i] += 2.0 * dy[i] * xv[i];
      break;
    }
    case Op::kScale: {
      const double factor = aux_[node.aux_ofs];
      double* dx = in_grads(0);
      for (int i = 0; i < n; ++i) dx[i] += factor * dy[i];
      break;
    }
    case Op::kSum: {
      const double g = dy[0];
      double* dx = in_grads(0);
      const int in = in_node(0).val_size;
      for (int i = 0; i < in; ++i) dx[i] += g;
      break;
    }
    case Op::kMeanMany: {
      const double g = dy[0] / node.in_count;
      for (int slot = 0; slot < node.in_count; ++slot) in_grads(slot)[0] += g;
      break;
    }
    case Op::kExp: {
      const double* yv = vals_.data() + node.val_ofs;
      double* dx = in_grads(0);
      for (int i = 0; i < n; ++i) dx[i] += dy[i] * yv[i];
      break;
    }
    case Op::kNorm2: {
      const double y = vals_[static_cast<std::size_t>(node.val_ofs)];
      if (y == 0.0) break;  // subgradient 0 at the origin
      const double g = dy[0] / y;
      const double* xv = in_vals(0);
      double* dx = in_grads(0);
      const int in = in_node(0).val_size;
      for (int i = 0; i < in; ++i) dx[i] += g * xv[i];
      break;
    }
    case Op::kSigmoidT: {
      const double tau = aux_[node.aux_ofs];
      const double* yv = vals_.data() + node.val_ofs;
      double* dx = in_grads(0);
      for (int i = 0; i < n; ++i) dx[i] += dy[i] * yv[i] * (1.0 - yv[i]) / tau;
      break;
    }
    case Op::kRenderPower: {
      const double delta = aux_[node.aux_ofs];
      const double a = in_vals(0)[0];
      const double s = in_vals(1)[0];
      const double log10_sigma_over_d2 = (s - 2.0 * std::log(delta)) / std::numbers::ln10;
      in_grads(0)[0] += dy[0] * log10_sigma_over_d2;
      in_grads(1)[0] += dy[0] * a / std::numbers::ln10;
      break;
    }
    case Op::kHashEncode: {
      bool any = false;
      for (int i = 0; i < n && !any; ++i) any = dy[i] != 0.0;
      if (!any) break;
      const int table_size = iaux_[node.iaux_ofs];
      const int features = iaux_[node.iaux_ofs + 1];
      const int n_min = iaux_[node.iaux_ofs + 2];
      const double growth = aux_[node.aux_ofs];
      const int levels = node.iaux_count - 3;
      const double* xv = in_vals(0);
      double* dx = in_grads(0);
      for (int level = 0; level < levels; ++level) {
        const int resolution = hash_level_resolution(n_min, growth, level);
        const LevelInterp interp = level_interp(xv, resolution);
        const int block = iaux_[node.iaux_ofs + 3 + level];
        const auto table = store_->values(block);
        auto dtable = store_->grads(block);
        const double* dlevel = dy + static_cast<std::size_t>(level) * features;
        const double dgrid = 0.5 * resolution;  // d(grid coord)/d(x)
        for (int corner = 0; corner < 8; ++corner) {
          const int bits[3] = {corner & 1, (corner >> 1) & 1, (corner >> 2) & 1};
          const double wa[3] = {bits[0] ? interp.frac[0] : 1.0 - interp.frac[0],
                                bits[1] ? interp.frac[1] : 1.0 - interp.frac[1],
                                bits[2] ? interp.frac[2] : 1.0 - interp.frac[2]};
          const double w = wa[0] * wa[1] * wa[2];
          const std::uint64_t h = corner_hash(static_cast<std::uint64_t>(interp.cell[0] + bits[0]),
                                              static_cast<std::uint64_t>(interp.cell[1] + bits[1]),
                                              static_cast<std::uint64_t>(interp.cell[2] + bits[2]), table_size);
          const double* row = table.data() + h * static_cast<std::uint64_t>(features);
          double* drow = dtable.data() + h * static_cast<std::uint64_t>(features);
          double dy_dot_row = 0.0;
          for (int f = 0; f < features; ++f) {
            if (w != 0.0) drow[f] += w * dlevel[f];
            dy_dot_row += dlevel[f] * row[f];
          }
          for (int a = 0; a < 3; ++a) {
            if (!interp.live[a]) continue;
            const double sign = bits[a] ? 1.0 : -1.0;
            const double w_other = wa[(a + 1) % 3] * wa[(a + 2) % 3];
            dx[a] += dy_dot_row * sign * w_other * dgrid;
          }
        }
      }
      break;
    }
    case Op::kSinusoid: {
      const int frequencies = iaux_[node.iaux_ofs];
      const double tv = in_vals(0)[0];
      double acc = 0.0;
      for (int k = 0; k < frequencies; ++k) {
        const double omega = std::pow(2.0, k) * std::numbers::pi;
        acc += omega * (dy[2 * k] * std::cos(omega * tv) - dy[2 * k + 1] * std::sin(omega * tv));
      }
      in_grads(0)[0] += acc;
      break;
    }
    case Op::kShEncode: {
      const int degree = iaux_[node.iaux_ofs];
      const double* dv = in_vals(0);
      const double norm = std::sqrt(dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2]);
      const double nv[3] = {dv[0] / norm, dv[1] / norm, dv[2] / norm};
      double grad_n[3] = {0.0, 0.0, 0.0};
      sh_basis_backward(nv, degree, dy, grad_n);
      const double radial = nv[0] * grad_n[0] + nv[1] * grad_n[1] + nv[2] * grad_n[2];
      double* dx = in_grads(0);
      for (int a = 0; a < 3; ++a) dx[a] += (grad_n[a] - nv[a] * radial) / norm;
      break;
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  inputs_.clear();
  vals_.clear();
  grads_.clear();
  aux_.clear();
  iaux_.clear();
}

}  // namespace rf4d::diffcore
