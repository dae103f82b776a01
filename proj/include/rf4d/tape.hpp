#pragma once

#include <span>
#include <vector>

#include "rf4d/params.hpp"

namespace rf4d::diffcore {

/// Opaque handle to a tape node.
struct NodeId {
  int index = -1;
  bool valid() const { return index >= 0; }
};

/// Real spherical-harmonic basis at a unit direction; writes (degree+1)^2
/// entries. Band-1 ordering is (-y, z, -x) scaled.
void sh_basis_unit(const double* n, int degree, double* out);

/// Trilinear lookup of one hash-grid level: accumulates the interpolated
/// feature row into out[0..features). table_size must be a power of two.
void hash_level_eval(std::span<const double> table, int table_size, int features, int resolution,
                     const double* x, double* out);

/// Resolution of level `level`: floor(n_min * growth^level).
int hash_level_resolution(int n_min, double growth, int level);

/// Per-level hash grid geometry resolved to parameter blocks. Level l uses
/// resolution floor(n_min * growth^l); each block is shaped [table_size,
/// features].
struct HashTapeSpec {
  int table_size = 0;  // power of two
  int features = 0;
  int n_min = 0;
  double growth = 1.0;
  std::vector<int> level_blocks;
};

/// Reverse-mode tape over vector-valued nodes. Records a forward computation
/// against one ParamStore; backward() accumulates d(root)/d(theta) into the
/// store's gradient buffers and visits each node exactly once.
///
/// One tape per training step; recording and backward are single-threaded.
/// Tapes over a frozen store (no backward) may run concurrently.
class Tape {
 public:
  explicit Tape(ParamStore& store) : store_(&store) {}

  /// Constant leaf; receives no gradient.
  NodeId input(std::span<const double> values);
  NodeId input_scalar(double value);

  /// y = W x + b for blocks shaped [out, in] and [out].
  NodeId affine(int w_block, int b_block, NodeId x);
  NodeId relu(NodeId x);
  NodeId concat(NodeId a, NodeId b);
  NodeId slice(NodeId x, int offset, int size);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId square(NodeId x);
  NodeId scale(NodeId x, double factor);
  NodeId sum(NodeId x);
  /// Mean of scalar nodes.
  NodeId mean_many(std::span<const NodeId> xs);
  NodeId exp(NodeId x);
  /// Euclidean norm; subgradient 0 at the origin.
  NodeId norm2(NodeId x);
  /// Elementwise sigmoid((x + noise) / tau); noise is a frozen constant.
  NodeId sigmoid_t(NodeId x, std::span<const double> noise, double tau);
  /// Fused power rendering alpha * (s_raw - 2 ln delta) / ln 10 where s_raw
  /// is the raw log-RCS head output, so sigma = exp(s_raw) never overflows.
  NodeId render_power_raw(NodeId alpha, NodeId s_raw, double delta_m);
  /// Multi-resolution hash encoding of a 3-point in [-1,1]^3 (clamped with a
  /// store warning otherwise). Output length levels * features. Gradients
  /// reach the touched table rows and the input position.
  NodeId hash_encode(NodeId x, const HashTapeSpec& spec);
  /// [sin(2^k pi t), cos(2^k pi t)] for k = 0..frequencies-1.
  NodeId sinusoid(NodeId t, int frequencies);
  /// Real spherical-harmonic basis of a direction, (degree+1)^2 entries.
  /// The input is normalized internally (DegenerateError below norm 0.5);
  /// gradients flow through the normalization.
  NodeId sh_encode(NodeId d, int degree);

  /// View into the value arena; invalidated by recording further ops.
  std::span<const double> value(NodeId id) const;
  double scalar(NodeId id) const;
  int node_count() const { return static_cast<int>(nodes_.size()); }

  /// Seeds d(root) = 1 and propagates to every recorded node and touched
  /// parameter block. Root must be scalar.
  void backward(NodeId root);

  /// Drops all nodes, keeping arena capacity for reuse.
  void reset();

  ParamStore& store() { return *store_; }

 private:
  enum class Op : std::uint8_t {
    kInput,
    kAffine,
    kRelu,
    kConcat,
    kSlice,
    kAdd,
    kSub,
    kMul,
    kSquare,
    kScale,
    kSum,
    kMeanMany,
    kExp,
    kNorm2,
    kSigmoidT,
    kRenderPower,
    kHashEncode,
    kSinusoid,
    kShEncode,
  };

  struct Node {
    Op op;
    int in_ofs = 0, in_count = 0;    // indices into inputs_
    int val_ofs = 0, val_size = 0;   // slice of vals_/grads_
    int aux_ofs = 0, aux_count = 0;  // slice of aux_ (double constants)
    int iaux_ofs = 0, iaux_count = 0;  // slice of iaux_ (int constants)
  };

  NodeId push(Op op, std::span<const NodeId> inputs, int out_size, std::span<const double> aux = {},
              std::span<const int> iaux = {});
  const Node& node_at(NodeId id) const;
  void backward_node(const Node& node);

  ParamStore* store_;
  std::vector<Node> nodes_;
  std::vector<int> inputs_;
  std::vector<double> vals_;
  std::vector<double> grads_;
  std::vector<double> aux_;
  std::vector<int> iaux_;
};

}  // namespace rf4d::diffcore
