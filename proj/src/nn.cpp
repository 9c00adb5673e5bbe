#include "sgvae/nn.hpp"

#include <cmath>

#include "sgvae/error.hpp"

namespace sgvae {

std::size_t ParameterStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  Tensor t;
  t.name = name;
  t.value = Matrix::Zero(rows, cols);
  t.grad = Matrix::Zero(rows, cols);
  t.m = Matrix::Zero(rows, cols);
  t.v = Matrix::Zero(rows, cols);
  tensors_.push_back(std::move(t));
  return tensors_.size() - 1;
}

std::size_t ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  throw ValidationError("no parameter named '" + name + "'");
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (Tensor& t : tensors_) t.grad.setZero();
}

double ParameterStore::grad_norm() const {
  double s = 0.0;
  for (const Tensor& t : tensors_) s += t.grad.squaredNorm();
  return std::sqrt(s);
}

void ParameterStore::scale_grad(double factor) {
  for (Tensor& t : tensors_) t.grad *= factor;
}

void ParameterStore::adam_step(double lr, double beta1, double beta2, double eps) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (Tensor& t : tensors_) {
    t.m = beta1 * t.m + (1.0 - beta1) * t.grad;
    t.v = beta2 * t.v + (1.0 - beta2) * t.grad.cwiseProduct(t.grad);
    t.value.array() -= lr * (t.m.array() / c1) / ((t.v.array() / c2).sqrt() + eps);
  }
}

void glorot_init(Matrix& m, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
}

Matrix im2col(const Matrix& x, std::size_t batch, std::size_t steps, std::size_t kernel) {
  const Eigen::Index c = x.cols();
  const long half = static_cast<long>(kernel / 2);
  Matrix col = Matrix::Zero(x.rows(), c * static_cast<Eigen::Index>(kernel));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(b * steps + t);
      for (std::size_t k = 0; k < kernel; ++k) {
        const long src = static_cast<long>(t) + static_cast<long>(k) - half;
        if (src < 0 || src >= static_cast<long>(steps)) continue;
        col.block(row, static_cast<Eigen::Index>(k) * c, 1, c) =
            x.row(static_cast<Eigen::Index>(b * steps) + src);
      }
    }
  }
  return col;
}

void col2im_add(const Matrix& dcol, std::size_t batch, std::size_t steps, std::size_t kernel,
                Matrix& dx) {
  const Eigen::Index c = dx.cols();
  const long half = static_cast<long>(kernel / 2);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(b * steps + t);
      for (std::size_t k = 0; k < kernel; ++k) {
        const long src = static_cast<long>(t) + static_cast<long>(k) - half;
        if (src < 0 || src >= static_cast<long>(steps)) continue;
        dx.row(static_cast<Eigen::Index>(b * steps) + src) +=
            dcol.block(row, static_cast<Eigen::Index>(k) * c, 1, c);
      }
    }
  }
}

namespace {

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

}  // namespace

Matrix gru_step(const Matrix& gi, const Matrix& h_prev, const Matrix& w_h, const Matrix& b_h,
                GruCache& cache) {
  const Eigen::Index h = h_prev.cols();
  Matrix gh = h_prev * w_h;
  gh.rowwise() += b_h.row(0);
  cache.h_prev = h_prev;
  cache.r = sigmoid(gi.leftCols(h) + gh.leftCols(h));
  cache.u = sigmoid(gi.middleCols(h, h) + gh.middleCols(h, h));
  cache.hn = gh.rightCols(h);
  cache.n = (gi.rightCols(h).array() + cache.r.array() * cache.hn.array()).tanh().matrix();
  return ((1.0 - cache.u.array()) * cache.n.array() + cache.u.array() * h_prev.array()).matrix();
}

void gru_step_backward(const GruCache& c, const Matrix& dh, const Matrix& w_h, Matrix& dgi,
                       Matrix& dw_h, Matrix& db_h, Matrix& dh_prev) {
  const Eigen::Index h = c.h_prev.cols();
  const Eigen::Index rows = dh.rows();
  const Eigen::ArrayXXd dn = dh.array() * (1.0 - c.u.array());
  const Eigen::ArrayXXd du = dh.array() * (c.h_prev.array() - c.n.array());
  const Eigen::ArrayXXd dn_pre = dn * (1.0 - c.n.array().square());
  const Eigen::ArrayXXd dr = dn_pre * c.hn.array();
  const Eigen::ArrayXXd dr_pre = dr * c.r.array() * (1.0 - c.r.array());
  const Eigen::ArrayXXd du_pre = du * c.u.array() * (1.0 - c.u.array());

  dgi.resize(rows, 3 * h);
  dgi.leftCols(h) = dr_pre.matrix();
  dgi.middleCols(h, h) = du_pre.matrix();
  dgi.rightCols(h) = dn_pre.matrix();

  Matrix dgh(rows, 3 * h);
  dgh.leftCols(h) = dr_pre.matrix();
  dgh.middleCols(h, h) = du_pre.matrix();
  dgh.rightCols(h) = (dn_pre * c.r.array()).matrix();

  dw_h.noalias() += c.h_prev.transpose() * dgh;
  db_h += dgh.colwise().sum();
  dh_prev.noalias() += dgh * w_h.transpose();
  dh_prev.array() += dh.array() * c.u.array();
}

}  // namespace sgvae
