#pragma once

#include <vector>

#include <Eigen/Dense>

#include "sgvae/autoencoder.hpp"

namespace sgvae {

// Minimizes sum_i (A f_i - mu_i)^T Sigma_i^{-1} (A f_i - mu_i) + lambda ||A||_F^2
// over A (D x F). Each latent row d decouples into the ridge system
// (sum_i w_id f_i f_i^T + lambda I) a_d = sum_i w_id mu_id f_i with
// w_id = exp(-log_var_id). Throws ValidationError for empty or mismatched
// inputs, a negative lambda, or a singular system.
Matrix fit_latent_projection(const std::vector<Eigen::VectorXd>& features,
                             const std::vector<LatentGaussian>& latents, double lambda = 100.0);

double projection_objective(const Matrix& a, const std::vector<Eigen::VectorXd>& features,
                            const std::vector<LatentGaussian>& latents, double lambda);

Eigen::VectorXd project_features(const Matrix& a, const Eigen::VectorXd& feature);

}  // namespace sgvae
