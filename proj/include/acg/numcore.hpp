#pragma once

// Dense numeric substrate: parameter storage, the handful of layers the
// model needs (GRU cell, perceptron scorer, affine), their reverse-mode
// counterparts, Adam, a finite-difference checker and checkpoint IO.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace acg::num {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Component a parameter belongs to; the staged trainer freezes by tag.
enum class Tag : std::uint8_t {
  kEncoder,
  kQueryEncoder,
  kAttention,
  kDecoder,
  kGenerator,
  kCopier,
  kSwitch,
  kEmbedding,
};

std::string_view tag_name(Tag tag);
Tag parse_tag(std::string_view name);

// Small bitset over Tag.
class TagSet {
 public:
  TagSet() = default;
  TagSet(std::initializer_list<Tag> tags) {
    for (Tag t : tags) insert(t);
  }
  void insert(Tag t) { bits_ |= bit(t); }
  bool contains(Tag t) const { return (bits_ & bit(t)) != 0; }
  bool empty() const { return bits_ == 0; }
  bool operator==(const TagSet&) const = default;

 private:
  static std::uint32_t bit(Tag t) { return 1u << static_cast<unsigned>(t); }
  std::uint32_t bits_ = 0;
};

struct ParamId {
  std::size_t index = 0;
};

enum class Init { kXavier, kZero };

struct Parameter {
  std::string name;
  Tag tag;
  Mat value;
};

// Gradient buffers aligned with a ParameterStore by index. Workers in the
// data-parallel path each own one and are reduced in a fixed order.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const class ParameterStore& store);

  Mat& operator[](ParamId id) { return grads_[id.index]; }
  const Mat& operator[](ParamId id) const { return grads_[id.index]; }
  Mat& at(std::size_t i) { return grads_[i]; }
  const Mat& at(std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }

  void set_zero();
  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);
  double squared_norm() const;

 private:
  std::vector<Mat> grads_;
};

class ParameterStore {
 public:
  ParamId add(std::string name, Tag tag, Eigen::Index rows, Eigen::Index cols, Init init,
              std::mt19937_64& rng);

  const Mat& value(ParamId id) const { return params_[id.index].value; }
  Mat& value(ParamId id) { return params_[id.index].value; }
  const Parameter& at(std::size_t i) const { return params_[i]; }
  Parameter& at(std::size_t i) { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::optional<ParamId> find(std::string_view name) const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Gradient storage owned alongside the parameters.
  Gradients& grads() { return grads_; }
  const Gradients& grads() const { return grads_; }
  void zero_grad() { grads_.set_zero(); }

  bool bitwise_equal(const ParameterStore& other) const;
  bool bitwise_equal(const ParameterStore& other, Tag tag) const;

 private:
  std::vector<Parameter> params_;
  Gradients grads_;
};

// Throws NumericError when any entry is NaN or infinite.
void require_finite(const Mat& m, std::string_view what);
void require_finite(double x, std::string_view what);

// Numerically stable softmax (max-subtracted). Empty input is an error.
Vec softmax(const Vec& logits);
// Given y = softmax(x) and dL/dy, returns dL/dx.
Vec softmax_backward(const Vec& y, const Vec& dy);

double logistic(double x);

// GRU cell:
//   r = σ(W_r x + U_r h + b_r)
//   z = σ(W_z x + U_z h + b_z)
//   n = tanh(W_n x + U_n (r ⊙ h) + b_n)
//   h' = z ⊙ h + (1 − z) ⊙ n
// W, U, b are stacked in the order [r; z; n].
struct GruLayer {
  ParamId w, u, b;
  int input_dim = 0;
  int hidden_dim = 0;

  struct Cache {
    Vec x, h, r, z, n;
  };

  static GruLayer create(ParameterStore& store, const std::string& prefix, Tag tag,
                         int input_dim, int hidden_dim, std::mt19937_64& rng);

  Vec forward(const ParameterStore& store, const Vec& x, const Vec& h, Cache* cache) const;
  // Accumulates parameter gradients; adds into dx (if non-null) and dh_prev.
  void backward(const ParameterStore& store, const Cache& cache, const Vec& dh_new,
                Gradients& grads, Vec* dx, Vec& dh_prev) const;
};

// Scalar scorer  v · tanh(Σ_k W_k x_k + b)  over a list of input blocks.
// Equivalent to a one-hidden-layer perceptron over the concatenation; the
// block split lets callers precompute projections of fixed inputs.
struct EtaLayer {
  std::vector<ParamId> w;
  ParamId b, v;
  int hidden_dim = 0;

  static EtaLayer create(ParameterStore& store, const std::string& prefix, Tag tag,
                         const std::vector<int>& input_dims, int hidden_dim,
                         std::mt19937_64& rng);

  Vec project(const ParameterStore& store, std::size_t block, const Vec& x) const;
  // Returns the logit; stores tanh activations into *act when given.
  double finish(const ParameterStore& store, const Vec& pre, Vec* act) const;
  double forward(const ParameterStore& store, std::span<const Vec> inputs) const;

  // Backward through finish(): accumulates dv, db and returns d(pre).
  Vec backward_finish(const ParameterStore& store, double dlogit, const Vec& act,
                      Gradients& grads) const;
  // Backward through project(): accumulates dW_block; adds W_blockᵀ dpre to *dx.
  void backward_project(const ParameterStore& store, std::size_t block, const Vec& x,
                        const Vec& dpre, Gradients& grads, Vec* dx) const;
};

struct AffineLayer {
  ParamId w, b;

  static AffineLayer create(ParameterStore& store, const std::string& prefix, Tag tag,
                            int input_dim, int output_dim, std::mt19937_64& rng);
  Vec forward(const ParameterStore& store, const Vec& x) const;
  void backward(const ParameterStore& store, const Vec& x, const Vec& dy, Gradients& grads,
                Vec* dx) const;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Mat> first_moment;
  std::vector<Mat> second_moment;

  AdamState() = default;
  AdamState(const ParameterStore& store, AdamConfig cfg);
};

// Bias-corrected Adam step. Parameters tagged in `frozen` are neither
// updated nor have their moments touched.
void adam_update(ParameterStore& store, const Gradients& grads, AdamState& state,
                 const TagSet& frozen);

// Scales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

// Scalar objective over a store; fills reverse-mode gradients when `grads`
// is non-null.
using ScalarFn = std::function<double(const ParameterStore&, Gradients*)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = 0;
  std::size_t coordinates_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor for |a − n| / max(|a| + |n|, floor).
  double floor = 1e-5;
  // Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t samples_per_param = 0;
  std::uint64_t seed = 1;
};

// Central differences against reverse-mode gradients.
GradCheckResult gradient_check(const ScalarFn& fn, ParameterStore& store,
                               const GradCheckOptions& opts = {});

inline constexpr int kCheckpointVersion = 1;

using Metadata = std::map<std::string, std::string>;

// Layout: a leading `version <int>` line, `meta <key> <value>` lines, one
// `param <name> <tag> f64 <rows>x<cols>` line per parameter, an `end` line,
// then raw little-endian row-major float64 blocks in manifest order.
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const Metadata& meta);
Metadata read_checkpoint_metadata(const std::string& path);
// Loads values into an already-shaped store; names, tags and shapes must match.
Metadata load_checkpoint(const std::string& path, ParameterStore& store);

}  // namespace acg::num
