#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sgvae {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;  // Adam first moment
  Matrix v;  // Adam second moment
};

class ParameterStore {
 public:
  std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  Matrix& value(std::size_t i) { return tensors_[i].value; }
  const Matrix& value(std::size_t i) const { return tensors_[i].value; }
  Matrix& grad(std::size_t i) { return tensors_[i].grad; }

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t find(const std::string& name) const;  // throws if absent
  std::size_t parameter_count() const;

  void zero_grad();
  double grad_norm() const;
  void scale_grad(double factor);
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

 private:
  std::vector<Tensor> tensors_;
  std::size_t step_ = 0;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
void glorot_init(Matrix& m, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// Sequences are stored batch-major: row b * steps + t holds step t of item b.
// im2col gathers the `kernel` neighbouring rows (zero outside the sequence,
// centred on t) into one row of width kernel * channels.
Matrix im2col(const Matrix& x, std::size_t batch, std::size_t steps, std::size_t kernel);
// Adjoint of im2col: scatters column gradients back onto dx (accumulating).
void col2im_add(const Matrix& dcol, std::size_t batch, std::size_t steps, std::size_t kernel,
                Matrix& dx);

// One GRU step. `gi` is the input projection x W_i + b_i (B x 3H, gate
// blocks r | u | n); W_h is H x 3H.
struct GruCache {
  Matrix h_prev;
  Matrix r, u, n;
  Matrix hn;  // h_prev W_hn + b_hn
};

Matrix gru_step(const Matrix& gi, const Matrix& h_prev, const Matrix& w_h, const Matrix& b_h,
                GruCache& cache);

// Given dL/dh_new: writes dL/dgi, accumulates dW_h and db_h, adds dL/dh_prev.
void gru_step_backward(const GruCache& cache, const Matrix& dh, const Matrix& w_h, Matrix& dgi,
                       Matrix& dw_h, Matrix& db_h, Matrix& dh_prev);

}  // namespace sgvae
