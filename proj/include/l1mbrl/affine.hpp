#pragma once

#include "l1mbrl/common.hpp"
#include "l1mbrl/dynmodel.hpp"
#include "l1mbrl/l1core.hpp"

#include <memory>

namespace l1mbrl {

/// First-order expansion of a model in the input only, around an anchor ū:
///   f^a(x, u; ū) = f(x, ū) + J(x, ū) (u - ū) = g(x) + h(x) u,
/// with h(x) = J(x, ū) and g(x) = f(x, ū) - h(x) ū.
/// Holds a shared snapshot of the model, so it stays consistent if the
/// caller later retrains into a new object.
///
/// The model must be C^1 in u. Models with kinks (ReLU) would need the
/// switching law skipped at non-differentiable points; no such model is
/// provided here.
class AffineModel {
 public:
  AffineModel(std::shared_ptr<const DynamicsModel> model, Vector anchor);

  const Vector& anchor() const { return anchor_; }
  const DynamicsModel& model() const { return *model_; }
  std::shared_ptr<const DynamicsModel> model_ptr() const { return model_; }

  /// g(x) and h(x) from one model and one Jacobian evaluation at (x, ū).
  AffinePiecesd pieces(const Vector& x) const;
  Vector eval(const Vector& x, const Vector& u) const;

 private:
  std::shared_ptr<const DynamicsModel> model_;
  Vector anchor_;
};

AffineModel affinize(std::shared_ptr<const DynamicsModel> model, const Vector& anchor);
Vector eval_affine(const AffineModel& am, const Vector& x, const Vector& u);

struct SwitchDecision {
  bool fire = false;
  double residual = 0.0;  ///< ||f^a(x, u) - f(x, u)||_2
};

/// Re-affinization is due when the residual reaches eps_a (inclusive).
SwitchDecision switching_check(const AffineModel& am, const Vector& x, const Vector& u,
                               double eps_a);

struct SwitchEvent {
  int t = 0;
  Vector old_anchor;  ///< empty for the first affinization of an episode
  Vector new_anchor;
  double residual = 0.0;
};

}  // namespace l1mbrl
