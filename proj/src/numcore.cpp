#include "acg/numcore.hpp"

#include "acg/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace acg::num {

namespace {

constexpr std::string_view kTagNames[] = {
    "encoder", "query_encoder", "attention", "decoder",
    "generator", "copier", "switch", "embedding",
};

// Uniform in [0, 1) from the top 53 bits; independent of the standard
// library's distribution implementation.
double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Vec sigmoid(const Vec& x) {
  return x.unaryExpr([](double v) { return logistic(v); });
}

}  // namespace

std::string_view tag_name(Tag tag) { return kTagNames[static_cast<std::size_t>(tag)]; }

Tag parse_tag(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kTagNames); ++i) {
    if (kTagNames[i] == name) return static_cast<Tag>(i);
  }
  throw CheckpointError("unknown component tag '" + std::string(name) + "'");
}

Gradients::Gradients(const ParameterStore& store) {
  grads_.reserve(store.size());
  for (const auto& p : store) grads_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
}

void Gradients::set_zero() {
  for (auto& g : grads_) g.setZero();
}

Gradients& Gradients::operator+=(const Gradients& other) {
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (auto& g : grads_) g *= s;
  return *this;
}

double Gradients::squared_norm() const {
  double total = 0.0;
  for (const auto& g : grads_) total += g.squaredNorm();
  return total;
}

ParamId ParameterStore::add(std::string name, Tag tag, Eigen::Index rows, Eigen::Index cols,
                            Init init, std::mt19937_64& rng) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Mat value = Mat::Zero(rows, cols);
  if (init == Init::kXavier) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    // Row-major fill so the draw order matches the checkpoint layout.
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) value(r, c) = (2.0 * unit_uniform(rng) - 1.0) * limit;
  }
  params_.push_back(Parameter{std::move(name), tag, std::move(value)});
  grads_ = Gradients(*this);
  return ParamId{params_.size() - 1};
}

std::optional<ParamId> ParameterStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return ParamId{i};
  return std::nullopt;
}

namespace {
bool same_bits(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::equal(a.data(), a.data() + a.size(), b.data(), [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  });
}
}  // namespace

bool ParameterStore::bitwise_equal(const ParameterStore& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i)
    if (!same_bits(params_[i].value, other.params_[i].value)) return false;
  return true;
}

bool ParameterStore::bitwise_equal(const ParameterStore& other, Tag tag) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (params_[i].tag != tag) continue;
    if (!same_bits(params_[i].value, other.params_[i].value)) return false;
  }
  return true;
}

void require_finite(const Mat& m, std::string_view what) {
  if (!m.allFinite()) throw NumericError("non-finite values in " + std::string(what));
}

void require_finite(double x, std::string_view what) {
  if (!std::isfinite(x)) throw NumericError("non-finite value in " + std::string(what));
}

Vec softmax(const Vec& logits) {
  if (logits.size() == 0) throw std::invalid_argument("softmax of an empty vector");
  require_finite(logits, "softmax logits");
  Vec e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Vec softmax_backward(const Vec& y, const Vec& dy) {
  return y.cwiseProduct(dy.array().matrix() - Vec::Constant(y.size(), y.dot(dy)));
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

GruLayer GruLayer::create(ParameterStore& store, const std::string& prefix, Tag tag,
                          int input_dim, int hidden_dim, std::mt19937_64& rng) {
  GruLayer g;
  g.input_dim = input_dim;
  g.hidden_dim = hidden_dim;
  g.w = store.add(prefix + ".W", tag, 3 * hidden_dim, input_dim, Init::kXavier, rng);
  g.u = store.add(prefix + ".U", tag, 3 * hidden_dim, hidden_dim, Init::kXavier, rng);
  g.b = store.add(prefix + ".b", tag, 3 * hidden_dim, 1, Init::kZero, rng);
  return g;
}

Vec GruLayer::forward(const ParameterStore& store, const Vec& x, const Vec& h,
                      Cache* cache) const {
  if (x.size() != input_dim || h.size() != hidden_dim)
    throw DimensionError("GRU input/state dimension mismatch");
  const int H = hidden_dim;
  const Mat& W = store.value(w);
  const Mat& U = store.value(u);
  const Mat& B = store.value(b);

  Vec wx = W * x + B.col(0);
  Vec rz = wx.head(2 * H) + U.topRows(2 * H) * h;
  Vec r = sigmoid(rz.head(H));
  Vec z = sigmoid(rz.tail(H));
  Vec n = (wx.tail(H) + U.bottomRows(H) * r.cwiseProduct(h)).array().tanh().matrix();
  Vec out = z.cwiseProduct(h) + (Vec::Ones(H) - z).cwiseProduct(n);
  if (cache) *cache = Cache{x, h, std::move(r), std::move(z), std::move(n)};
  return out;
}

void GruLayer::backward(const ParameterStore& store, const Cache& c, const Vec& dh_new,
                        Gradients& grads, Vec* dx, Vec& dh_prev) const {
  const int H = hidden_dim;
  const Mat& W = store.value(w);
  const Mat& U = store.value(u);

  Vec dz = dh_new.cwiseProduct(c.h - c.n);
  Vec dn = dh_new.cwiseProduct(Vec::Ones(H) - c.z);
  dh_prev += dh_new.cwiseProduct(c.z);

  Vec dpre(3 * H);
  auto dn_pre = dpre.tail(H);
  dn_pre = dn.cwiseProduct((Vec::Ones(H) - c.n.cwiseAbs2()));
  Vec rh = c.r.cwiseProduct(c.h);
  Vec drh = U.bottomRows(H).transpose() * dn_pre;
  Vec dr = drh.cwiseProduct(c.h);
  dh_prev += drh.cwiseProduct(c.r);
  dpre.head(H) = dr.cwiseProduct(c.r.cwiseProduct(Vec::Ones(H) - c.r));
  dpre.segment(H, H) = dz.cwiseProduct(c.z.cwiseProduct(Vec::Ones(H) - c.z));

  grads[w].noalias() += dpre * c.x.transpose();
  grads[b].col(0) += dpre;
  grads[u].topRows(2 * H).noalias() += dpre.head(2 * H) * c.h.transpose();
  grads[u].bottomRows(H).noalias() += dn_pre * rh.transpose();
  dh_prev.noalias() += U.topRows(2 * H).transpose() * dpre.head(2 * H);
  if (dx) dx->noalias() += W.transpose() * dpre;
}

EtaLayer EtaLayer::create(ParameterStore& store, const std::string& prefix, Tag tag,
                          const std::vector<int>& input_dims, int hidden_dim,
                          std::mt19937_64& rng) {
  EtaLayer e;
  e.hidden_dim = hidden_dim;
  int total = 0;
  for (int d : input_dims) total += d;
  // Blocks of one hidden-by-total matrix: initialize with the joint fan-in.
  Mat joint(hidden_dim, total);
  {
    const double limit = std::sqrt(6.0 / static_cast<double>(hidden_dim + total));
    for (Eigen::Index r = 0; r < joint.rows(); ++r)
      for (Eigen::Index c = 0; c < joint.cols(); ++c)
        joint(r, c) = (2.0 * unit_uniform(rng) - 1.0) * limit;
  }
  int offset = 0;
  for (std::size_t k = 0; k < input_dims.size(); ++k) {
    ParamId id = store.add(prefix + ".W" + std::to_string(k), tag, hidden_dim, input_dims[k],
                           Init::kZero, rng);
    store.value(id) = joint.middleCols(offset, input_dims[k]);
    offset += input_dims[k];
    e.w.push_back(id);
  }
  e.b = store.add(prefix + ".b", tag, hidden_dim, 1, Init::kZero, rng);
  e.v = store.add(prefix + ".v", tag, hidden_dim, 1, Init::kXavier, rng);
  return e;
}

Vec EtaLayer::project(const ParameterStore& store, std::size_t block, const Vec& x) const {
  const Mat& W = store.value(w.at(block));
  if (x.size() != W.cols()) throw DimensionError("eta input dimension mismatch");
  return W * x;
}

double EtaLayer::finish(const ParameterStore& store, const Vec& pre, Vec* act) const {
  Vec t = (pre + store.value(b).col(0)).array().tanh().matrix();
  const double logit = store.value(v).col(0).dot(t);
  if (act) *act = std::move(t);
  return logit;
}

double EtaLayer::forward(const ParameterStore& store, std::span<const Vec> inputs) const {
  if (inputs.size() != w.size()) throw DimensionError("eta expects " + std::to_string(w.size()) + " inputs");
  Vec pre = Vec::Zero(hidden_dim);
  for (std::size_t k = 0; k < inputs.size(); ++k) pre += project(store, k, inputs[k]);
  return finish(store, pre, nullptr);
}

Vec EtaLayer::backward_finish(const ParameterStore& store, double dlogit, const Vec& act,
                              Gradients& grads) const {
  grads[v].col(0) += dlogit * act;
  Vec dpre = dlogit * store.value(v).col(0).cwiseProduct(Vec::Ones(act.size()) - act.cwiseAbs2());
  grads[b].col(0) += dpre;
  return dpre;
}

void EtaLayer::backward_project(const ParameterStore& store, std::size_t block, const Vec& x,
                                const Vec& dpre, Gradients& grads, Vec* dx) const {
  grads[w[block]].noalias() += dpre * x.transpose();
  if (dx) dx->noalias() += store.value(w[block]).transpose() * dpre;
}

AffineLayer AffineLayer::create(ParameterStore& store, const std::string& prefix, Tag tag,
                                int input_dim, int output_dim, std::mt19937_64& rng) {
  AffineLayer a;
  a.w = store.add(prefix + ".W", tag, output_dim, input_dim, Init::kXavier, rng);
  a.b = store.add(prefix + ".b", tag, output_dim, 1, Init::kZero, rng);
  return a;
}

Vec AffineLayer::forward(const ParameterStore& store, const Vec& x) const {
  const Mat& W = store.value(w);
  if (x.size() != W.cols()) throw DimensionError("affine input dimension mismatch");
  return W * x + store.value(b).col(0);
}

void AffineLayer::backward(const ParameterStore& store, const Vec& x, const Vec& dy,
                           Gradients& grads, Vec* dx) const {
  grads[w].noalias() += dy * x.transpose();
  grads[b].col(0) += dy;
  if (dx) dx->noalias() += store.value(w).transpose() * dy;
}

AdamState::AdamState(const ParameterStore& store, AdamConfig cfg) : config(cfg) {
  for (const auto& p : store) {
    first_moment.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    second_moment.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
  }
}

void adam_update(ParameterStore& store, const Gradients& grads, AdamState& state,
                 const TagSet& frozen) {
  if (grads.size() != store.size() || state.first_moment.size() != store.size())
    throw std::invalid_argument("adam_update: gradients or moments missing for some parameters");
  const auto& cfg = state.config;
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store.at(i);
    if (frozen.contains(p.tag)) continue;
    const Mat& g = grads.at(i);
    if (g.rows() != p.value.rows() || g.cols() != p.value.cols())
      throw std::invalid_argument("adam_update: gradient shape mismatch for " + p.name);
    Mat& m = state.first_moment[i];
    Mat& v = state.second_moment[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    p.value.array() -= cfg.learning_rate * (m.array() / c1) /
                       ((v.array() / c2).sqrt() + cfg.epsilon);
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  require_finite(norm, "gradient norm");
  if (norm > max_norm) grads *= max_norm / norm;
  return norm;
}

GradCheckResult gradient_check(const ScalarFn& fn, ParameterStore& store,
                               const GradCheckOptions& opts) {
  Gradients analytic(store);
  require_finite(fn(store, &analytic), "gradient_check objective");

  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    Mat& value = store.at(pi).value;
    const Eigen::Index count = value.size();
    std::vector<Eigen::Index> coords;
    if (opts.samples_per_param == 0 || static_cast<std::size_t>(count) <= opts.samples_per_param) {
      for (Eigen::Index k = 0; k < count; ++k) coords.push_back(k);
    } else {
      for (std::size_t s = 0; s < opts.samples_per_param; ++s)
        coords.push_back(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(count)));
    }
    for (Eigen::Index k : coords) {
      double& slot = value.data()[k];
      const double saved = slot;
      slot = saved + opts.step;
      const double plus = fn(store, nullptr);
      slot = saved - opts.step;
      const double minus = fn(store, nullptr);
      slot = saved;
      require_finite(plus, "gradient_check objective");
      require_finite(minus, "gradient_check objective");
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double a = analytic.at(pi).data()[k];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), opts.floor);
      ++result.coordinates_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = store.at(pi).name;
        result.worst_index = k;
      }
    }
  }
  return result;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO writes host-order doubles and assumes little-endian");

struct ManifestEntry {
  std::string name;
  Tag tag;
  Eigen::Index rows, cols;
};

struct Header {
  Metadata meta;
  std::vector<ManifestEntry> entries;
};

Header read_header(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(path + ": empty checkpoint");
  {
    std::istringstream ls(line);
    std::string key;
    int version = -1;
    if (!(ls >> key >> version) || key != "version")
      throw CheckpointError(path + ": missing checkpoint version line");
    if (version != kCheckpointVersion)
      throw CheckpointError(path + ": checkpoint version " + std::to_string(version) +
                            " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
  }
  Header h;
  while (std::getline(in, line)) {
    if (line == "end") return h;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      h.meta[key] = value;
    } else if (kind == "param") {
      std::string name, tag, dtype, shape;
      if (!(ls >> name >> tag >> dtype >> shape) || dtype != "f64")
        throw CheckpointError(path + ": malformed manifest line '" + line + "'");
      const auto x = shape.find('x');
      if (x == std::string::npos) throw CheckpointError(path + ": bad shape '" + shape + "'");
      h.entries.push_back({name, parse_tag(tag), std::stol(shape.substr(0, x)),
                           std::stol(shape.substr(x + 1))});
    } else {
      throw CheckpointError(path + ": unexpected header line '" + line + "'");
    }
  }
  throw CheckpointError(path + ": truncated header");
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const Metadata& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out << "version " << kCheckpointVersion << '\n';
  for (const auto& [k, v] : meta) out << "meta " << k << ' ' << v << '\n';
  for (const auto& p : store)
    out << "param " << p.name << ' ' << tag_name(p.tag) << " f64 " << p.value.rows() << 'x'
        << p.value.cols() << '\n';
  out << "end\n";
  for (const auto& p : store) {
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double x = p.value(r, c);
        out.write(reinterpret_cast<const char*>(&x), sizeof x);
      }
  }
  if (!out) throw CheckpointError("failed writing " + path);
}

Metadata read_checkpoint_metadata(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  return read_header(in, path).meta;
}

Metadata load_checkpoint(const std::string& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  Header h = read_header(in, path);
  if (h.entries.size() != store.size())
    throw CheckpointError(path + ": parameter count differs from the model");
  for (std::size_t i = 0; i < h.entries.size(); ++i) {
    const auto& e = h.entries[i];
    Parameter& p = store.at(i);
    if (e.name != p.name || e.tag != p.tag || e.rows != p.value.rows() || e.cols != p.value.cols())
      throw CheckpointError(path + ": manifest entry '" + e.name + "' does not match model parameter '" +
                            p.name + "'");
  }
  for (std::size_t i = 0; i < h.entries.size(); ++i) {
    Mat& value = store.at(i).value;
    for (Eigen::Index r = 0; r < value.rows(); ++r)
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        double x;
        if (!in.read(reinterpret_cast<char*>(&x), sizeof x))
          throw CheckpointError(path + ": truncated value block");
        value(r, c) = x;
      }
    require_finite(value, "checkpoint " + store.at(i).name);
  }
  return h.meta;
}

}  // namespace acg::num
