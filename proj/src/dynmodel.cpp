#include "l1mbrl/dynmodel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace l1mbrl {

Matrix DynamicsModel::predict_batch(const Matrix& X, const Matrix& U) const {
  Matrix out(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    out.col(j) = predict(X.col(j), U.col(j));
  return out;
}

std::shared_ptr<AnalyticModel> make_linear_model(const Matrix& A, const Matrix& B) {
  if (A.rows() != A.cols() || B.rows() != A.rows())
    throw ContractViolation("linear model: A must be n x n and B n x m");
  return std::make_shared<AnalyticModel>(
      static_cast<int>(A.rows()), static_cast<int>(B.cols()),
      [A, B](const Vector& x, const Vector& u) { return Vector(A * x + B * u); },
      [B](const Vector&, const Vector&) { return B; });
}

// ---------------------------------------------------------------------------
// Normalizer

Normalizer Normalizer::identity(Eigen::Index din, Eigen::Index dout) {
  return Normalizer{Vector::Zero(din), Vector::Ones(din), Vector::Zero(dout),
                    Vector::Ones(dout)};
}

namespace {

void column_stats(const Matrix& data, Vector& mean, Vector& sd) {
  const double count = static_cast<double>(data.cols());
  mean = data.rowwise().sum() / count;
  const Matrix centered = data.colwise() - mean;
  sd = (centered.array().square().rowwise().sum() / count).sqrt().matrix();
  sd = sd.cwiseMax(Normalizer::kStdFloor);
}

}  // namespace

Normalizer Normalizer::fit(const Matrix& inputs, const Matrix& targets) {
  if (inputs.cols() == 0 || inputs.cols() != targets.cols())
    throw ContractViolation("normalizer fit needs matching non-empty data");
  Normalizer nz;
  column_stats(inputs, nz.mu_in, nz.sd_in);
  column_stats(targets, nz.mu_out, nz.sd_out);
  return nz;
}

Matrix Normalizer::normalize_in(const Matrix& in) const {
  return (in.colwise() - mu_in).array().colwise() / sd_in.array();
}

Matrix Normalizer::denormalize_in(const Matrix& z) const {
  return (z.array().colwise() * sd_in.array()).matrix().colwise() + mu_in;
}

Matrix Normalizer::normalize_out(const Matrix& y) const {
  return (y.colwise() - mu_out).array().colwise() / sd_out.array();
}

Matrix Normalizer::denormalize_out(const Matrix& z) const {
  return (z.array().colwise() * sd_out.array()).matrix().colwise() + mu_out;
}

Matrix unnormalize_jacobian(const Matrix& jn, const Vector& sd_out,
                            const Vector& sd_in) {
  if (jn.rows() != sd_out.size() || jn.cols() != sd_in.size())
    throw ContractViolation("unnormalize_jacobian: dimension mismatch");
  return sd_out.asDiagonal() * jn * sd_in.cwiseInverse().asDiagonal();
}

// ---------------------------------------------------------------------------
// MlpModel

MlpModel MlpModel::init(const std::vector<int>& widths, Rng& rng) {
  if (widths.size() < 2) throw ContractViolation("mlp needs at least input and output widths");
  MlpModel net;
  net.widths = widths;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Vector::Zero(fan_out));
  }
  return net;
}

Matrix MlpModel::forward(const Matrix& in) const {
  Matrix a = in;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Matrix z = weights[l] * a;
    z.colwise() += biases[l];
    if (l + 1 < weights.size()) a = z.array().tanh().matrix();
    else a = std::move(z);
  }
  return a;
}

Matrix MlpModel::input_jacobian(const Vector& in) const {
  Vector a = in;
  Matrix jac = Matrix::Identity(in.size(), in.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Vector z = weights[l] * a + biases[l];
    jac = weights[l] * jac;
    if (l + 1 < weights.size()) {
      a = z.array().tanh().matrix();
      jac = (1.0 - a.array().square()).matrix().asDiagonal() * jac;
    }
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Ensemble

namespace {

std::vector<int> member_widths(int n, int m, const std::vector<int>& hidden) {
  std::vector<int> w{n + m};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(n);
  return w;
}

std::vector<MlpModel> fresh_members(int n, int m, const TrainOptions& opts,
                                    int version) {
  std::vector<MlpModel> out;
  for (int i = 0; i < opts.members; ++i) {
    Rng rng = Rng::stream(opts.seed, {static_cast<std::uint64_t>(version),
                                      static_cast<std::uint64_t>(i), 0});
    out.push_back(MlpModel::init(member_widths(n, m, opts.hidden), rng));
  }
  return out;
}

}  // namespace

Ensemble::Ensemble(int n, int m, const TrainOptions& opts)
    : n_(n), m_(m), seed_(opts.seed), version_(0),
      members_(fresh_members(n, m, opts, 0)),
      normalizer_(Normalizer::identity(n + m, n)) {
  if (n < 1 || m < 1) throw ContractViolation("ensemble needs n, m >= 1");
  if (opts.members < 1) throw ConfigError("ensemble needs at least one member", "/model/members");
}

Vector Ensemble::join(const Vector& x, const Vector& u) const {
  require_dim(x, n_, "ensemble state");
  require_dim(u, m_, "ensemble input");
  require_finite(x, "ensemble state");
  require_finite(u, "ensemble input");
  Vector in(n_ + m_);
  in << x, u;
  return in;
}

Vector Ensemble::predict(const Vector& x, const Vector& u) const {
  const Matrix z = normalizer_.normalize_in(join(x, u));
  Matrix acc = Matrix::Zero(n_, 1);
  for (const auto& net : members_) acc += net.forward(z);
  acc /= static_cast<double>(members_.size());
  return normalizer_.denormalize_out(acc).col(0);
}

Matrix Ensemble::predict_batch(const Matrix& X, const Matrix& U) const {
  if (X.rows() != n_ || U.rows() != m_ || X.cols() != U.cols())
    throw ContractViolation("ensemble predict_batch: dimension mismatch");
  Matrix in(n_ + m_, X.cols());
  in.topRows(n_) = X;
  in.bottomRows(m_) = U;
  const Matrix z = normalizer_.normalize_in(in);
  Matrix acc = Matrix::Zero(n_, X.cols());
  for (const auto& net : members_) acc += net.forward(z);
  acc /= static_cast<double>(members_.size());
  return normalizer_.denormalize_out(acc);
}

Vector Ensemble::predict_member(std::size_t i, const Vector& x, const Vector& u) const {
  const Matrix z = normalizer_.normalize_in(join(x, u));
  return normalizer_.denormalize_out(members_.at(i).forward(z)).col(0);
}

Matrix Ensemble::jacobian_u(const Vector& x, const Vector& u) const {
  const Vector z = normalizer_.normalize_in(join(x, u)).col(0);
  Matrix jn = Matrix::Zero(n_, n_ + m_);
  for (const auto& net : members_) jn += net.input_jacobian(z);
  jn /= static_cast<double>(members_.size());
  return unnormalize_jacobian(jn, normalizer_.sd_out, normalizer_.sd_in).rightCols(m_);
}

namespace {

using nlohmann::json;

json to_json(const Matrix& mat) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < mat.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < mat.cols(); ++j) row.push_back(mat(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Matrix matrix_from(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) out(i, k) = j[i][k].get<double>();
  return out;
}

Vector vector_from(const json& j) {
  Vector out(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = j[i].get<double>();
  return out;
}

constexpr int kFormatVersion = 1;

}  // namespace

void Ensemble::save(const std::string& path) const {
  json doc;
  doc["format"] = "l1mbrl-ensemble";
  doc["format_version"] = kFormatVersion;
  doc["n"] = n_;
  doc["m"] = m_;
  doc["seed"] = seed_;
  doc["version"] = version_;
  doc["normalizer"] = {{"mu_in", to_json(normalizer_.mu_in)},
                       {"sd_in", to_json(normalizer_.sd_in)},
                       {"mu_out", to_json(normalizer_.mu_out)},
                       {"sd_out", to_json(normalizer_.sd_out)}};
  json members = json::array();
  for (const auto& net : members_) {
    json layers = json::array();
    for (std::size_t l = 0; l < net.layers(); ++l)
      layers.push_back({{"weight", to_json(net.weights[l])}, {"bias", to_json(net.biases[l])}});
    members.push_back({{"widths", net.widths}, {"layers", layers}});
  }
  doc["members"] = members;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ensemble file " + path);
  out << doc.dump(1) << '\n';
}

Ensemble Ensemble::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read ensemble file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("ensemble file " + path + ": " + e.what());
  }
  if (doc.value("format", "") != "l1mbrl-ensemble" ||
      doc.value("format_version", 0) != kFormatVersion)
    throw ConfigError("ensemble file " + path + ": unsupported format");
  Ensemble ens;
  ens.n_ = doc["n"].get<int>();
  ens.m_ = doc["m"].get<int>();
  ens.seed_ = doc["seed"].get<std::uint64_t>();
  ens.version_ = doc["version"].get<int>();
  const auto& nz = doc["normalizer"];
  ens.normalizer_ = Normalizer{vector_from(nz["mu_in"]), vector_from(nz["sd_in"]),
                               vector_from(nz["mu_out"]), vector_from(nz["sd_out"])};
  for (const auto& mj : doc["members"]) {
    MlpModel net;
    net.widths = mj["widths"].get<std::vector<int>>();
    for (const auto& lj : mj["layers"]) {
      net.weights.push_back(matrix_from(lj["weight"]));
      net.biases.push_back(vector_from(lj["bias"]));
    }
    ens.members_.push_back(std::move(net));
  }
  return ens;
}

// ---------------------------------------------------------------------------
// Dataset

bool TransitionDataset::add(const Vector& x, const Vector& u, const Vector& x_next) {
  require_dim(x, n_, "dataset state");
  require_dim(u, m_, "dataset input");
  require_dim(x_next, n_, "dataset next state");
  if (!x.allFinite() || !u.allFinite() || !x_next.allFinite()) return false;
  rows_.push_back(Row{x, u, x_next});
  return true;
}

void TransitionDataset::append(const TransitionDataset& other) {
  if (other.empty()) return;
  if (other.n_ != n_ || other.m_ != m_)
    throw ContractViolation("dataset append: dimension mismatch");
  rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
}

Matrix TransitionDataset::inputs(const std::vector<std::size_t>& idx) const {
  Matrix out(n_ + m_, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const Row& r = rows_[idx[j]];
    out.col(static_cast<Eigen::Index>(j)) << r.x, r.u;
  }
  return out;
}

Matrix TransitionDataset::targets(const std::vector<std::size_t>& idx) const {
  Matrix out(n_, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const Row& r = rows_[idx[j]];
    out.col(static_cast<Eigen::Index>(j)) = r.x_next - r.x;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

double TrainReport::mean_val_loss() const {
  if (members.empty()) return 0.0;
  double s = 0.0;
  for (const auto& m : members) s += m.best_val_loss;
  return s / static_cast<double>(members.size());
}

double TrainReport::mean_train_loss() const {
  if (members.empty()) return 0.0;
  double s = 0.0;
  for (const auto& m : members) s += m.final_train_loss;
  return s / static_cast<double>(members.size());
}

namespace {

double mse(const MlpModel& net, const Matrix& in, const Matrix& target) {
  if (in.cols() == 0) return 0.0;
  return (net.forward(in) - target).array().square().mean();
}

struct Adam {
  explicit Adam(const MlpModel& net, double lr) : lr(lr) {
    for (std::size_t l = 0; l < net.layers(); ++l) {
      mw.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
      vw.push_back(mw.back());
      mb.push_back(Vector::Zero(net.biases[l].size()));
      vb.push_back(mb.back());
    }
  }

  void step(MlpModel& net, const std::vector<Matrix>& gw, const std::vector<Vector>& gb) {
    ++t;
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t l = 0; l < net.layers(); ++l) {
      mw[l] = kBeta1 * mw[l] + (1.0 - kBeta1) * gw[l];
      vw[l] = kBeta2 * vw[l] + (1.0 - kBeta2) * gw[l].cwiseAbs2();
      mb[l] = kBeta1 * mb[l] + (1.0 - kBeta1) * gb[l];
      vb[l] = kBeta2 * vb[l] + (1.0 - kBeta2) * gb[l].cwiseAbs2();
      net.weights[l].array() -=
          lr * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + kEps);
      net.biases[l].array() -=
          lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + kEps);
    }
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr;
  int t = 0;
  std::vector<Matrix> mw, vw;
  std::vector<Vector> mb, vb;
};

// Gradient of the mean squared error over the batch; returns the loss.
double backprop(const MlpModel& net, const Matrix& in, const Matrix& target,
                std::vector<Matrix>& gw, std::vector<Vector>& gb) {
  const std::size_t L = net.layers();
  std::vector<Matrix> acts{in};
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = net.weights[l] * acts.back();
    z.colwise() += net.biases[l];
    if (l + 1 < L) acts.push_back(z.array().tanh().matrix());
    else acts.push_back(std::move(z));
  }
  const Matrix err = acts.back() - target;
  const double loss = err.array().square().mean();
  Matrix delta = (2.0 / static_cast<double>(err.size())) * err;
  gw.resize(L);
  gb.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    gw[l].noalias() = delta * acts[l].transpose();
    gb[l] = delta.rowwise().sum();
    if (l > 0) {
      Matrix back = net.weights[l].transpose() * delta;
      delta = (back.array() * (1.0 - acts[l].array().square())).matrix();
    }
  }
  return loss;
}

MemberReport train_member(MlpModel& net, const Matrix& train_in, const Matrix& train_out,
                          const Matrix& val_in, const Matrix& val_out,
                          const TrainOptions& opts, Rng& shuffle_rng, int index) {
  const bool has_val = val_in.cols() > 0;
  auto val_loss = [&] {
    return has_val ? mse(net, val_in, val_out) : mse(net, train_in, train_out);
  };

  MemberReport rep;
  rep.init_val_loss = val_loss();
  rep.best_val_loss = rep.init_val_loss;
  MlpModel best = net;
  int since_best = 0;

  Adam adam(net, opts.learning_rate);
  std::vector<std::size_t> order(static_cast<std::size_t>(train_in.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<Matrix> gw;
  std::vector<Vector> gb;
  const auto batch = static_cast<std::size_t>(opts.batch_size);

  for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const auto cols = static_cast<Eigen::Index>(end - start);
      Matrix bin(train_in.rows(), cols), bout(train_out.rows(), cols);
      for (std::size_t k = start; k < end; ++k) {
        const auto j = static_cast<Eigen::Index>(k - start);
        bin.col(j) = train_in.col(static_cast<Eigen::Index>(order[k]));
        bout.col(j) = train_out.col(static_cast<Eigen::Index>(order[k]));
      }
      const double loss = backprop(net, bin, bout, gw, gb);
      if (!std::isfinite(loss))
        throw TrainingDivergence("ensemble member " + std::to_string(index) +
                                     " diverged (non-finite loss) in epoch " +
                                     std::to_string(epoch),
                                 index);
      adam.step(net, gw, gb);
      epoch_loss += loss * static_cast<double>(cols);
      seen += end - start;
    }
    rep.final_train_loss = epoch_loss / static_cast<double>(seen);
    rep.epochs = epoch;

    const double v = val_loss();
    if (!std::isfinite(v))
      throw TrainingDivergence("ensemble member " + std::to_string(index) +
                                   " diverged (non-finite validation loss)",
                               index);
    if (v < rep.best_val_loss) {
      rep.best_val_loss = v;
      best = net;
      since_best = 0;
    } else if (++since_best >= opts.patience) {
      break;
    }
  }
  net = std::move(best);
  return rep;
}

}  // namespace

TrainReport train(Ensemble& ensemble, const TransitionDataset& data,
                  const TrainOptions& opts) {
  if (data.empty()) throw ConfigError("cannot train on an empty dataset");
  if (data.size() < static_cast<std::size_t>(opts.batch_size))
    throw ConfigError("dataset has " + std::to_string(data.size()) +
                      " rows, fewer than the batch size " +
                      std::to_string(opts.batch_size));
  if (opts.members < 1 || opts.batch_size < 1 || opts.max_epochs < 0 ||
      !(opts.learning_rate > 0.0) || opts.val_fraction < 0.0 || opts.val_fraction >= 1.0)
    throw ConfigError("invalid training options");
  if (data.state_dim() != ensemble.state_dim() || data.input_dim() != ensemble.input_dim())
    throw ContractViolation("dataset and ensemble dimensions differ");

  const int version = ensemble.version() + 1;
  const int n = ensemble.state_dim();
  const int m = ensemble.input_dim();

  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng = Rng::stream(opts.seed, {static_cast<std::uint64_t>(version), 0xD5, 0});
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[split_rng.index(i)]);
  const auto n_val = static_cast<std::size_t>(opts.val_fraction * static_cast<double>(data.size()));
  std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());

  const Matrix train_in_raw = data.inputs(train_idx);
  const Matrix train_out_raw = data.targets(train_idx);
  Normalizer nz = Normalizer::fit(train_in_raw, train_out_raw);
  const Matrix train_in = nz.normalize_in(train_in_raw);
  const Matrix train_out = nz.normalize_out(train_out_raw);
  const Matrix val_in = nz.normalize_in(data.inputs(val_idx));
  const Matrix val_out = nz.normalize_out(data.targets(val_idx));

  std::vector<MlpModel> members = fresh_members(n, m, opts, version);
  TrainReport report;
  for (int i = 0; i < opts.members; ++i) {
    Rng shuffle_rng = Rng::stream(opts.seed, {static_cast<std::uint64_t>(version),
                                              static_cast<std::uint64_t>(i), 1});
    report.members.push_back(train_member(members[static_cast<std::size_t>(i)], train_in,
                                          train_out, val_in, val_out, opts, shuffle_rng, i));
  }

  ensemble.set_members(std::move(members));
  ensemble.set_normalizer(std::move(nz));
  ensemble.set_version(version);
  return report;
}

}  // namespace l1mbrl
