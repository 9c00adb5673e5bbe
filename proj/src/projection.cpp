#include "sgvae/projection.hpp"

#include <algorithm>
#include <cmath>

#include "sgvae/error.hpp"

namespace sgvae {

namespace {

void check_inputs(const std::vector<Eigen::VectorXd>& features,
                  const std::vector<LatentGaussian>& latents) {
  if (features.empty()) throw ValidationError("projection needs at least one training pair");
  if (features.size() != latents.size()) throw ValidationError("feature and latent counts differ");
  const Eigen::Index f = features.front().size();
  const Eigen::Index d = latents.front().mu.size();
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != f || latents[i].mu.size() != d || latents[i].log_var.size() != d) {
      throw ValidationError("inconsistent dimensions in training pair " + std::to_string(i));
    }
  }
}

}  // namespace

Matrix fit_latent_projection(const std::vector<Eigen::VectorXd>& features,
                             const std::vector<LatentGaussian>& latents, double lambda) {
  check_inputs(features, latents);
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
  const Eigen::Index f = features.front().size();
  const Eigen::Index d = latents.front().mu.size();
  Matrix a(d, f);
  for (Eigen::Index row = 0; row < d; ++row) {
    Eigen::MatrixXd lhs = lambda * Eigen::MatrixXd::Identity(f, f);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(f);
    for (std::size_t i = 0; i < features.size(); ++i) {
      const double w = std::exp(-latents[i].log_var[row]);
      lhs.noalias() += w * features[i] * features[i].transpose();
      rhs += w * latents[i].mu[row] * features[i];
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(lhs);
    const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
    if (llt.info() != Eigen::Success ||
        diag.minCoeff() <= 1e-7 * std::max(1.0, diag.maxCoeff())) {
      throw ValidationError("projection system is singular; use lambda > 0");
    }
    a.row(row) = llt.solve(rhs).transpose();
  }
  return a;
}

double projection_objective(const Matrix& a, const std::vector<Eigen::VectorXd>& features,
                            const std::vector<LatentGaussian>& latents, double lambda) {
  check_inputs(features, latents);
  double total = lambda * a.squaredNorm();
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Eigen::VectorXd r = a * features[i] - latents[i].mu;
    total += (r.array().square() * (-latents[i].log_var.array()).exp()).sum();
  }
  return total;
}

Eigen::VectorXd project_features(const Matrix& a, const Eigen::VectorXd& feature) {
  if (feature.size() != a.cols()) throw ValidationError("feature has the wrong dimension");
  return a * feature;
}

}  // namespace sgvae
