#include "l1mbrl/affine.hpp"

namespace l1mbrl {

AffineModel::AffineModel(std::shared_ptr<const DynamicsModel> model, Vector anchor)
    : model_(std::move(model)), anchor_(std::move(anchor)) {
  if (!model_) throw ContractViolation("affinize: null model");
  require_dim(anchor_, model_->input_dim(), "affinize anchor");
  require_finite(anchor_, "affinize anchor");
}

AffinePiecesd AffineModel::pieces(const Vector& x) const {
  require_dim(x, model_->state_dim(), "affine state");
  AffinePiecesd p;
  p.h = model_->jacobian_u(x, anchor_);
  p.g = model_->predict(x, anchor_) - p.h * anchor_;
  return p;
}

Vector AffineModel::eval(const Vector& x, const Vector& u) const {
  require_dim(u, model_->input_dim(), "affine input");
  const Matrix h = model_->jacobian_u(x, anchor_);
  return model_->predict(x, anchor_) + h * (u - anchor_);
}

AffineModel affinize(std::shared_ptr<const DynamicsModel> model, const Vector& anchor) {
  return AffineModel(std::move(model), anchor);
}

Vector eval_affine(const AffineModel& am, const Vector& x, const Vector& u) {
  return am.eval(x, u);
}

SwitchDecision switching_check(const AffineModel& am, const Vector& x, const Vector& u,
                               double eps_a) {
  if (!(eps_a > 0.0)) throw ContractViolation("switching_check: eps_a must be > 0");
  SwitchDecision d;
  d.residual = (am.eval(x, u) - am.model().predict(x, u)).norm();
  d.fire = d.residual >= eps_a;
  return d;
}

}  // namespace l1mbrl
