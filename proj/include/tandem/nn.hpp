#pragma once

// Small dense-network toolkit with hand-written backward passes: affine
// layers, a one-hidden-layer ReLU network, Adam, and a text format for
// parameter blocks. Batches are row-major (one sample per row).

#include <Eigen/Dense>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tandem/csv.hpp"
#include "tandem/error.hpp"
#include "tandem/rng.hpp"

namespace tandem::nn {

using Eigen::MatrixXd;

inline MatrixXd glorot(Eigen::Index fan_in, Eigen::Index fan_out, CounterRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  MatrixXd w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-limit, limit);
  return w;
}

inline MatrixXd add_row(const MatrixXd& x, const MatrixXd& bias) { return x.rowwise() + bias.row(0); }

inline MatrixXd column_sums(const MatrixXd& g) { return g.colwise().sum(); }

/// y = x w + b, with w stored in x out and b as a 1 x out row.
struct Dense {
  MatrixXd w;
  MatrixXd b;

  static Dense init(Eigen::Index in, Eigen::Index out, CounterRng& rng) {
    return Dense{glorot(in, out, rng), MatrixXd::Zero(1, out)};
  }
  static Dense zeros(Eigen::Index in, Eigen::Index out) { return Dense{MatrixXd::Zero(in, out), MatrixXd::Zero(1, out)}; }

  Eigen::Index in() const { return w.rows(); }
  Eigen::Index out() const { return w.cols(); }

  MatrixXd forward(const MatrixXd& x) const { return add_row(x * w, b); }

  /// Accumulates parameter gradients into `grad` and returns dL/dx.
  MatrixXd backward(const MatrixXd& x, const MatrixXd& dy, Dense& grad) const {
    grad.w.noalias() += x.transpose() * dy;
    grad.b += column_sums(dy);
    return dy * w.transpose();
  }
};

/// in -> hidden (ReLU) -> out (linear).
struct Mlp {
  Dense l1;
  Dense l2;

  struct Cache {
    MatrixXd pre;     // hidden pre-activation
    MatrixXd hidden;  // relu(pre)
  };

  static Mlp init(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, CounterRng& rng) {
    Mlp m;
    m.l1 = Dense::init(in, hidden, rng);
    m.l2 = Dense::init(hidden, out, rng);
    return m;
  }
  static Mlp zeros_like(const Mlp& o) {
    return Mlp{Dense::zeros(o.l1.in(), o.l1.out()), Dense::zeros(o.l2.in(), o.l2.out())};
  }

  MatrixXd forward(const MatrixXd& x, Cache* cache = nullptr) const {
    MatrixXd pre = l1.forward(x);
    MatrixXd h = pre.cwiseMax(0.0);
    MatrixXd out = l2.forward(h);
    if (cache) {
      cache->pre = std::move(pre);
      cache->hidden = std::move(h);
    }
    return out;
  }

  MatrixXd backward(const MatrixXd& x, const Cache& cache, const MatrixXd& dout, Mlp& grad) const {
    MatrixXd dh = l2.backward(cache.hidden, dout, grad.l2);
    dh.array() *= (cache.pre.array() > 0.0).cast<double>();
    return l1.backward(x, dh, grad.l1);
  }

  void collect(std::vector<MatrixXd*>& out) {
    for (MatrixXd* p : {&l1.w, &l1.b, &l2.w, &l2.b}) out.push_back(p);
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over an ordered parameter list; `grads` must follow the same order.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<MatrixXd*>& params, const std::vector<MatrixXd*>& grads) {
    if (params.size() != grads.size()) throw Error(ErrorCode::dimension_mismatch, "adam: parameter/gradient count");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(MatrixXd::Zero(p->rows(), p->cols()));
        v_.push_back(MatrixXd::Zero(p->rows(), p->cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const MatrixXd& g = *grads[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
      params[i]->array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<MatrixXd> m_, v_;
  long t_ = 0;
};

inline void zero(const std::vector<MatrixXd*>& params) {
  for (auto* p : params) p->setZero();
}

inline bool all_finite(const std::vector<MatrixXd*>& params) {
  for (auto* p : params)
    if (!p->allFinite()) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Text parameter blocks: "<name> <rows> <cols>" then one row per line.

inline void write_matrix(std::ostream& out, const std::string& name, const MatrixXd& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << csv::format_double(m(i, j));
    }
    out << '\n';
  }
}

inline MatrixXd read_matrix(std::istream& in, const std::string& expected_name) {
  std::string name;
  Eigen::Index rows = -1, cols = -1;
  if (!(in >> name >> rows >> cols) || name != expected_name || rows < 0 || cols < 0)
    throw Error(ErrorCode::malformed_row, "checkpoint: expected block '" + expected_name + "'");
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::string tok;
      if (!(in >> tok)) throw Error(ErrorCode::malformed_row, "checkpoint: truncated block '" + name + "'");
      auto v = csv::parse_double(tok);
      if (!v || !std::isfinite(*v)) throw Error(ErrorCode::non_finite_value, "checkpoint: bad value in '" + name + "'");
      m(i, j) = *v;
    }
  return m;
}

inline void expect_token(std::istream& in, const std::string& token) {
  std::string got;
  if (!(in >> got) || got != token)
    throw Error(ErrorCode::malformed_row, "checkpoint: expected '" + token + "', got '" + got + "'");
}

}  // namespace tandem::nn
