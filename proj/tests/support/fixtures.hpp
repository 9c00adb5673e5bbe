#pragma once

// Shared test fixtures and independent oracles. Nothing here calls the
// library routine it is used to check.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sgvae/codec.hpp"
#include "sgvae/grammar.hpp"
#include "sgvae/nn.hpp"
#include "sgvae/scene.hpp"
#include "sgvae/synthetic.hpp"

namespace fixtures {

// bed/sofa grammar of the living-room example (bed, dresser, nightstand,
// sofa, table).
extern const char* const kBedroomGrammar;
// Five independent anchors with two exclusive children each.
extern const char* const kFiveAnchorGrammar;

sgvae::Grammar bedroom_grammar();
sgvae::Grammar five_anchor_grammar();

// Attribute model for the five-anchor grammar: a scene holds about three
// anchors on average, children sit 1.4 m to either side of their anchor.
sgvae::SyntheticModel five_anchor_model(const sgvae::Grammar& g);

sgvae::ObjectInstance object(const std::string& category, double x, double y, double z = 0.0,
                             double yaw = 0.0, double w = 1.0, double d = 1.0, double h = 1.0);
sgvae::Scene scene(std::vector<sgvae::ObjectInstance> objects);

sgvae::Pose random_pose(std::mt19937_64& rng, double extent = 5.0);

// 4x4 homogeneous matrix of a pose and back.
using Mat4 = std::array<std::array<double, 4>, 4>;
Mat4 pose_matrix(const sgvae::Pose& p);
Mat4 mat_mul(const Mat4& a, const Mat4& b);
Mat4 rigid_inverse(const Mat4& m);  // by transposing the rotation block
sgvae::Pose matrix_pose(const Mat4& m);

// Direct cell-by-cell evaluation of the stratified statistic.
double chi2_by_summation(const std::array<std::array<std::array<double, 2>, 2>, 2>& cells);
// 1 - integral_0^x exp(-t/2)/2 dt by composite Simpson.
double chi2_dof2_survival_by_integration(double x);

// Monte Carlo IoU of two yaw boxes with `samples` points.
double iou_monte_carlo(const sgvae::ObjectInstance& a, const sgvae::ObjectInstance& b,
                       std::size_t samples, std::uint64_t seed);

// Stack simulation over rule strings: empty when `seq` is a complete
// leftmost derivation followed by padding with well-formed attributes.
std::optional<std::string> derivation_error(const sgvae::RuleSequence& seq,
                                            const sgvae::Grammar& g);

std::string temp_path(const std::string& name);

// Moves every bias off zero so no ReLU input sits exactly on its kink.
void jitter_biases(sgvae::ParameterStore& params, std::uint64_t seed);

}  // namespace fixtures
