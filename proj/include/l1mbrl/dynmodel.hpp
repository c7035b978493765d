#pragma once

#include "l1mbrl/common.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace l1mbrl {

/// A discrete-time increment model: predict(x, u) estimates x_{t+1} - x_t.
/// Implementations must be pure and safe to call concurrently.
class DynamicsModel {
 public:
  virtual ~DynamicsModel() = default;

  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;
  virtual Vector predict(const Vector& x, const Vector& u) const = 0;
  /// d predict / d u at (x, u), an n x m matrix.
  virtual Matrix jacobian_u(const Vector& x, const Vector& u) const = 0;
  /// Column-wise prediction; X is n x N, U is m x N.
  virtual Matrix predict_batch(const Matrix& X, const Matrix& U) const;
};

/// Closed-form model, used for injected test models and the synthetic
/// verification systems.
class AnalyticModel final : public DynamicsModel {
 public:
  using Fn = std::function<Vector(const Vector&, const Vector&)>;
  using JacFn = std::function<Matrix(const Vector&, const Vector&)>;

  AnalyticModel(int n, int m, Fn f, JacFn jac)
      : n_(n), m_(m), f_(std::move(f)), jac_(std::move(jac)) {}

  int state_dim() const override { return n_; }
  int input_dim() const override { return m_; }
  Vector predict(const Vector& x, const Vector& u) const override { return f_(x, u); }
  Matrix jacobian_u(const Vector& x, const Vector& u) const override { return jac_(x, u); }

 private:
  int n_;
  int m_;
  Fn f_;
  JacFn jac_;
};

/// Delta x = A x + B u.
std::shared_ptr<AnalyticModel> make_linear_model(const Matrix& A, const Matrix& B);

/// Input/output standardization statistics of one training round.
struct Normalizer {
  Vector mu_in, sd_in;    ///< over concatenated (x, u)
  Vector mu_out, sd_out;  ///< over increments

  static constexpr double kStdFloor = 1e-8;

  static Normalizer identity(Eigen::Index din, Eigen::Index dout);
  /// Columns of `inputs` / `targets` are samples.
  static Normalizer fit(const Matrix& inputs, const Matrix& targets);

  Matrix normalize_in(const Matrix& in) const;
  Matrix denormalize_in(const Matrix& z) const;
  Matrix normalize_out(const Matrix& y) const;
  Matrix denormalize_out(const Matrix& z) const;
};

/// J = D_out * Jn * D_in^{-1}: maps a Jacobian of the normalized network
/// back to physical units.
Matrix unnormalize_jacobian(const Matrix& jn, const Vector& sd_out,
                            const Vector& sd_in);

/// Fully connected network, tanh on hidden layers, identity output.
struct MlpModel {
  std::vector<int> widths;  ///< [din, hidden..., dout]
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static MlpModel init(const std::vector<int>& widths, Rng& rng);

  int din() const { return widths.front(); }
  int dout() const { return widths.back(); }
  std::size_t layers() const { return weights.size(); }

  /// Batch forward; columns are samples.
  Matrix forward(const Matrix& in) const;
  /// d output / d input at one (normalized) input, dout x din.
  Matrix input_jacobian(const Vector& in) const;
};

struct TrainOptions {
  int members = 3;
  std::vector<int> hidden = {64, 64};
  double learning_rate = 1e-3;
  int batch_size = 64;
  double val_fraction = 0.2;
  int patience = 10;
  int max_epochs = 200;
  std::uint64_t seed = 0;
};

/// Mean-of-members increment predictor over shared normalization.
class Ensemble final : public DynamicsModel {
 public:
  Ensemble() = default;
  /// Freshly initialized members with identity normalization.
  Ensemble(int n, int m, const TrainOptions& opts);

  int state_dim() const override { return n_; }
  int input_dim() const override { return m_; }

  /// Denormalized mean of member outputs.
  Vector predict(const Vector& x, const Vector& u) const override;
  Matrix predict_batch(const Matrix& X, const Matrix& U) const override;
  /// Analytic d predict / d u, unnormalized.
  Matrix jacobian_u(const Vector& x, const Vector& u) const override;

  /// Denormalized prediction of a single member.
  Vector predict_member(std::size_t i, const Vector& x, const Vector& u) const;

  std::size_t size() const { return members_.size(); }
  const MlpModel& member(std::size_t i) const { return members_.at(i); }
  MlpModel& member(std::size_t i) { return members_.at(i); }
  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer nz) { normalizer_ = std::move(nz); }
  void set_members(std::vector<MlpModel> members) { members_ = std::move(members); }
  std::uint64_t seed() const { return seed_; }
  int version() const { return version_; }
  void set_version(int v) { version_ = v; }

  void save(const std::string& path) const;
  static Ensemble load(const std::string& path);

 private:
  Vector join(const Vector& x, const Vector& u) const;

  int n_ = 0;
  int m_ = 0;
  std::uint64_t seed_ = 0;
  int version_ = 0;
  std::vector<MlpModel> members_;
  Normalizer normalizer_;
};

/// Rows of (x, u_logged, x_next). Targets are x_next - x.
class TransitionDataset {
 public:
  struct Row {
    Vector x, u, x_next;
  };

  TransitionDataset() = default;
  TransitionDataset(int n, int m) : n_(n), m_(m) {}

  /// Returns false (and stores nothing) when any entry is non-finite.
  bool add(const Vector& x, const Vector& u, const Vector& x_next);
  void append(const TransitionDataset& other);

  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const Row& row(std::size_t i) const { return rows_.at(i); }
  const std::vector<Row>& rows() const { return rows_; }
  int state_dim() const { return n_; }
  int input_dim() const { return m_; }

  /// (n + m) x N inputs and n x N targets for the given row indices.
  Matrix inputs(const std::vector<std::size_t>& idx) const;
  Matrix targets(const std::vector<std::size_t>& idx) const;

 private:
  int n_ = 0;
  int m_ = 0;
  std::vector<Row> rows_;
};

struct MemberReport {
  double init_val_loss = 0.0;
  double best_val_loss = 0.0;
  double final_train_loss = 0.0;
  int epochs = 0;
};

struct TrainReport {
  std::vector<MemberReport> members;
  double mean_val_loss() const;
  double mean_train_loss() const;
};

/// Refits the normalizer on the training split and trains every member from
/// a fresh initialization with Adam on the normalized squared increment
/// error, early-stopping on validation loss. Increments the ensemble version.
TrainReport train(Ensemble& ensemble, const TransitionDataset& data,
                  const TrainOptions& opts);

}  // namespace l1mbrl
