#include "arcs/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace arcs::ad {

namespace {

// Row-wise stable log-sum-exp.
double logsumexp_row(const Eigen::RowVectorXd& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

}  // namespace

int Tape::push(Mat value, bool requires_grad) {
  Node n;
  n.val = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(const Mat& value, Mat* grad_sink) {
  int id = push(value, true);
  nodes_[id].external_grad = grad_sink;
  return id;
}

int Tape::constant(Mat value) { return push(std::move(value), false); }

Mat& Tape::grad(int node) {
  Node& n = nodes_[node];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

void Tape::backward(int loss_node) {
  if (nodes_[loss_node].val.rows() != 1 || nodes_[loss_node].val.cols() != 1)
    throw Error(Errc::BadConfig, "backward target must be a scalar node");
  grad(loss_node)(0, 0) = 1.0;
  for (int i = loss_node; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.back) n.back();
    if (n.external_grad) *n.external_grad += n.grad;
  }
}

int Tape::matmul(int a, int b) {
  int out = push(nodes_[a].val * nodes_[b].val,
                 nodes_[a].requires_grad || nodes_[b].requires_grad);
  nodes_[out].back = [this, a, b, out] {
    const Mat& g = nodes_[out].grad;
    if (nodes_[a].requires_grad) grad(a) += g * nodes_[b].val.transpose();
    if (nodes_[b].requires_grad) grad(b) += nodes_[a].val.transpose() * g;
  };
  return out;
}

int Tape::matmul_nt(int a, int b) {
  int out = push(nodes_[a].val * nodes_[b].val.transpose(),
                 nodes_[a].requires_grad || nodes_[b].requires_grad);
  nodes_[out].back = [this, a, b, out] {
    const Mat& g = nodes_[out].grad;
    if (nodes_[a].requires_grad) grad(a) += g * nodes_[b].val;
    if (nodes_[b].requires_grad) grad(b) += g.transpose() * nodes_[a].val;
  };
  return out;
}

int Tape::matmul_const_left(const Mat& c, int b) {
  int out = push(c * nodes_[b].val, nodes_[b].requires_grad);
  nodes_[out].back = [this, c, b, out] {
    if (nodes_[b].requires_grad) grad(b) += c.transpose() * nodes_[out].grad;
  };
  return out;
}

int Tape::add(int a, int b) {
  int out = push(nodes_[a].val + nodes_[b].val,
                 nodes_[a].requires_grad || nodes_[b].requires_grad);
  nodes_[out].back = [this, a, b, out] {
    if (nodes_[a].requires_grad) grad(a) += nodes_[out].grad;
    if (nodes_[b].requires_grad) grad(b) += nodes_[out].grad;
  };
  return out;
}

int Tape::add_const(int a, const Mat& c) {
  int out = push(nodes_[a].val + c, nodes_[a].requires_grad);
  nodes_[out].back = [this, a, out] {
    if (nodes_[a].requires_grad) grad(a) += nodes_[out].grad;
  };
  return out;
}

int Tape::add_rowvec(int a, int bias) {
  Mat v = nodes_[a].val;
  v.rowwise() += Eigen::RowVectorXd(nodes_[bias].val.row(0));
  int out = push(std::move(v),
                 nodes_[a].requires_grad || nodes_[bias].requires_grad);
  nodes_[out].back = [this, a, bias, out] {
    const Mat& g = nodes_[out].grad;
    if (nodes_[a].requires_grad) grad(a) += g;
    if (nodes_[bias].requires_grad) grad(bias) += g.colwise().sum();
  };
  return out;
}

int Tape::scale(int a, double s) {
  int out = push(nodes_[a].val * s, nodes_[a].requires_grad);
  nodes_[out].back = [this, a, s, out] {
    if (nodes_[a].requires_grad) grad(a) += nodes_[out].grad * s;
  };
  return out;
}

int Tape::hadamard(int a, int b) {
  int out = push(nodes_[a].val.cwiseProduct(nodes_[b].val),
                 nodes_[a].requires_grad || nodes_[b].requires_grad);
  nodes_[out].back = [this, a, b, out] {
    const Mat& g = nodes_[out].grad;
    if (nodes_[a].requires_grad) grad(a) += g.cwiseProduct(nodes_[b].val);
    if (nodes_[b].requires_grad) grad(b) += g.cwiseProduct(nodes_[a].val);
  };
  return out;
}

int Tape::slice_cols(int a, int j0, int n) {
  int out = push(nodes_[a].val.middleCols(j0, n), nodes_[a].requires_grad);
  nodes_[out].back = [this, a, j0, n, out] {
    if (nodes_[a].requires_grad)
      grad(a).middleCols(j0, n) += nodes_[out].grad;
  };
  return out;
}

int Tape::hstack(const std::vector<int>& parts) {
  long rows = nodes_[parts[0]].val.rows();
  long cols = 0;
  bool any_grad = false;
  for (int p : parts) {
    cols += nodes_[p].val.cols();
    any_grad = any_grad || nodes_[p].requires_grad;
  }
  Mat v(rows, cols);
  long at = 0;
  for (int p : parts) {
    v.middleCols(at, nodes_[p].val.cols()) = nodes_[p].val;
    at += nodes_[p].val.cols();
  }
  int out = push(std::move(v), any_grad);
  std::vector<int> ps = parts;
  nodes_[out].back = [this, ps, out] {
    long at = 0;
    for (int p : ps) {
      const long w = nodes_[p].val.cols();
      if (nodes_[p].requires_grad)
        grad(p) += nodes_[out].grad.middleCols(at, w);
      at += w;
    }
  };
  return out;
}

int Tape::gather_rows(int src, std::vector<int> ids) {
  Mat v(static_cast<long>(ids.size()), nodes_[src].val.cols());
  for (size_t t = 0; t < ids.size(); ++t) v.row(t) = nodes_[src].val.row(ids[t]);
  int out = push(std::move(v), nodes_[src].requires_grad);
  nodes_[out].back = [this, src, ids = std::move(ids), out] {
    if (!nodes_[src].requires_grad) return;
    Mat& g = grad(src);
    for (size_t t = 0; t < ids.size(); ++t)
      g.row(ids[t]) += nodes_[out].grad.row(t);
  };
  return out;
}

int Tape::rmsnorm(int x, int gain) {
  const Mat& xv = nodes_[x].val;
  const long rows = xv.rows(), cols = xv.cols();
  Eigen::VectorXd inv(rows);
  for (long r = 0; r < rows; ++r)
    inv(r) = 1.0 / std::sqrt(xv.row(r).squaredNorm() / cols + kRmsEps);
  Mat normalized = inv.asDiagonal() * xv;
  Mat v = normalized;
  v.array().rowwise() *= nodes_[gain].val.row(0).array();
  int out = push(std::move(v),
                 nodes_[x].requires_grad || nodes_[gain].requires_grad);
  nodes_[out].back = [this, x, gain, out, inv = std::move(inv),
                      normalized = std::move(normalized)] {
    const Mat& g = nodes_[out].grad;
    const Mat& xv = nodes_[x].val;
    const long cols = xv.cols();
    if (nodes_[gain].requires_grad)
      grad(gain) += g.cwiseProduct(normalized).colwise().sum();
    if (nodes_[x].requires_grad) {
      Mat gg = g;
      gg.array().rowwise() *= nodes_[gain].val.row(0).array();
      Mat& gx = grad(x);
      for (long r = 0; r < xv.rows(); ++r) {
        const double dot = gg.row(r).dot(xv.row(r));
        gx.row(r) += inv(r) * gg.row(r) -
                     (std::pow(inv(r), 3) * dot / cols) * xv.row(r);
      }
    }
  };
  return out;
}

int Tape::silu(int x) {
  const Mat& xv = nodes_[x].val;
  Mat sig = (1.0 / (1.0 + (-xv.array()).exp())).matrix();
  int out = push(xv.cwiseProduct(sig), nodes_[x].requires_grad);
  nodes_[out].back = [this, x, out, sig = std::move(sig)] {
    if (!nodes_[x].requires_grad) return;
    const Mat& xv = nodes_[x].val;
    Mat d = sig.array() * (1.0 + xv.array() * (1.0 - sig.array()));
    grad(x) += nodes_[out].grad.cwiseProduct(d);
  };
  return out;
}

int Tape::gelu(int x) {
  const Mat& xv = nodes_[x].val;
  Mat phi(xv.rows(), xv.cols());
  for (long r = 0; r < xv.rows(); ++r)
    for (long c = 0; c < xv.cols(); ++c)
      phi(r, c) = 0.5 * (1.0 + std::erf(xv(r, c) / std::sqrt(2.0)));
  int out = push(xv.cwiseProduct(phi), nodes_[x].requires_grad);
  nodes_[out].back = [this, x, out, phi = std::move(phi)] {
    if (!nodes_[x].requires_grad) return;
    const Mat& xv = nodes_[x].val;
    const double inv_sqrt2pi = 0.3989422804014327;
    Mat pdf = (inv_sqrt2pi * (-0.5 * xv.array().square()).exp()).matrix();
    Mat d = phi + xv.cwiseProduct(pdf);
    grad(x) += nodes_[out].grad.cwiseProduct(d);
  };
  return out;
}

int Tape::softmax_rows(int x) {
  const Mat& xv = nodes_[x].val;
  Mat p(xv.rows(), xv.cols());
  for (long r = 0; r < xv.rows(); ++r) {
    const double m = xv.row(r).maxCoeff();
    Eigen::RowVectorXd e = (xv.row(r).array() - m).exp();
    p.row(r) = e / e.sum();
  }
  int out = push(p, nodes_[x].requires_grad);
  nodes_[out].back = [this, x, out] {
    if (!nodes_[x].requires_grad) return;
    const Mat& p = nodes_[out].val;
    const Mat& g = nodes_[out].grad;
    Mat& gx = grad(x);
    for (long r = 0; r < p.rows(); ++r) {
      const double dot = g.row(r).dot(p.row(r));
      gx.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(p.row(r));
    }
  };
  return out;
}

int Tape::scalar_times_const(int scalar_node, const Mat& pattern) {
  int out =
      push(nodes_[scalar_node].val(0, 0) * pattern, nodes_[scalar_node].requires_grad);
  nodes_[out].back = [this, scalar_node, pattern, out] {
    if (nodes_[scalar_node].requires_grad)
      grad(scalar_node)(0, 0) += nodes_[out].grad.cwiseProduct(pattern).sum();
  };
  return out;
}

int Tape::row_select(int a, int b, std::vector<uint8_t> flags) {
  Mat v = nodes_[a].val;
  for (long r = 0; r < v.rows(); ++r)
    if (flags[r]) v.row(r) = nodes_[b].val.row(r);
  int out = push(std::move(v),
                 nodes_[a].requires_grad || nodes_[b].requires_grad);
  nodes_[out].back = [this, a, b, flags = std::move(flags), out] {
    const Mat& g = nodes_[out].grad;
    for (long r = 0; r < g.rows(); ++r) {
      if (flags[r]) {
        if (nodes_[b].requires_grad) grad(b).row(r) += g.row(r);
      } else {
        if (nodes_[a].requires_grad) grad(a).row(r) += g.row(r);
      }
    }
  };
  return out;
}

int Tape::mean_rows(int x, std::vector<uint8_t> include) {
  long count = 0;
  for (uint8_t f : include) count += f;
  if (count == 0) throw Error(Errc::BadConfig, "mean_rows over empty set");
  Mat v = Mat::Zero(1, nodes_[x].val.cols());
  for (long r = 0; r < nodes_[x].val.rows(); ++r)
    if (include[r]) v += nodes_[x].val.row(r);
  v /= static_cast<double>(count);
  int out = push(std::move(v), nodes_[x].requires_grad);
  nodes_[out].back = [this, x, include = std::move(include), count, out] {
    if (!nodes_[x].requires_grad) return;
    Mat& g = grad(x);
    const Mat scaled = nodes_[out].grad / static_cast<double>(count);
    for (long r = 0; r < g.rows(); ++r)
      if (include[r]) g.row(r) += scaled;
  };
  return out;
}

int Tape::weighted_logprob(int logits, std::vector<int> targets,
                           std::vector<double> coeffs, Mat logmask) {
  const Mat& z = nodes_[logits].val;
  const bool masked = logmask.size() > 0;
  Mat zm = masked ? Mat(z + logmask) : z;
  double total = 0.0;
  std::vector<double> lse(targets.size());
  for (size_t t = 0; t < targets.size(); ++t) {
    if (coeffs[t] == 0.0) continue;
    lse[t] = logsumexp_row(zm.row(t));
    total += coeffs[t] * (zm(t, targets[t]) - lse[t]);
  }
  int out = push(Mat::Constant(1, 1, total), nodes_[logits].requires_grad);
  nodes_[out].back = [this, logits, targets = std::move(targets),
                      coeffs = std::move(coeffs), zm = std::move(zm),
                      lse = std::move(lse), out] {
    if (!nodes_[logits].requires_grad) return;
    const double g = nodes_[out].grad(0, 0);
    Mat& gz = grad(logits);
    for (size_t t = 0; t < targets.size(); ++t) {
      if (coeffs[t] == 0.0) continue;
      Eigen::RowVectorXd p = (zm.row(t).array() - lse[t]).exp();
      gz.row(t) -= (g * coeffs[t]) * p;
      gz(t, targets[t]) += g * coeffs[t];
    }
  };
  return out;
}

int Tape::kl_vs_ref(int logits, const Mat& ref_logits, const Mat& logmask) {
  const Mat& z = nodes_[logits].val;
  Mat zm = z + logmask;
  Mat rm = ref_logits + logmask;
  const long rows = z.rows();
  Mat p(rows, z.cols());
  Mat diff(rows, z.cols());
  double total = 0.0;
  Eigen::VectorXd row_kl(rows);
  for (long r = 0; r < rows; ++r) {
    const double lz = logsumexp_row(zm.row(r));
    const double lr = logsumexp_row(rm.row(r));
    Eigen::RowVectorXd lp = zm.row(r).array() - lz;
    Eigen::RowVectorXd lq = rm.row(r).array() - lr;
    p.row(r) = lp.array().exp();
    diff.row(r) = lp - lq;
    row_kl(r) = p.row(r).cwiseProduct(diff.row(r)).sum();
    total += row_kl(r);
  }
  int out = push(Mat::Constant(1, 1, total), nodes_[logits].requires_grad);
  nodes_[out].back = [this, logits, p = std::move(p), diff = std::move(diff),
                      row_kl = std::move(row_kl), out] {
    if (!nodes_[logits].requires_grad) return;
    const double g = nodes_[out].grad(0, 0);
    Mat& gz = grad(logits);
    for (long r = 0; r < p.rows(); ++r)
      gz.row(r) += g * p.row(r).cwiseProduct(
                           (diff.row(r).array() - row_kl(r)).matrix());
  };
  return out;
}

int Tape::huber(int pred, double target, double delta) {
  const double r = nodes_[pred].val(0, 0) - target;
  const double loss = std::abs(r) <= delta ? 0.5 * r * r
                                           : delta * (std::abs(r) - 0.5 * delta);
  int out = push(Mat::Constant(1, 1, loss), nodes_[pred].requires_grad);
  nodes_[out].back = [this, pred, r, delta, out] {
    if (!nodes_[pred].requires_grad) return;
    grad(pred)(0, 0) += nodes_[out].grad(0, 0) * std::clamp(r, -delta, delta);
  };
  return out;
}

NamedTensor* ParamStore::find(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor* ParamStore::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors) t.grad.setZero();
}

long ParamStore::parameter_count() const {
  long n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

void adamw_step(ParamStore& params, double lr, const AdamWConfig& cfg,
                long step_number) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, step_number);
  const double bc2 = 1.0 - std::pow(cfg.beta2, step_number);
  for (auto& t : params.tensors) {
    t.adam_m = cfg.beta1 * t.adam_m + (1.0 - cfg.beta1) * t.grad;
    t.adam_v = cfg.beta2 * t.adam_v.array() +
               (1.0 - cfg.beta2) * t.grad.array().square();
    const Mat mhat = t.adam_m / bc1;
    const Mat vhat = t.adam_v / bc2;
    if (cfg.weight_decay > 0.0 && t.value.rows() > 1 && t.value.cols() > 1)
      t.value *= (1.0 - lr * cfg.weight_decay);
    t.value.array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg.eps);
  }
}

double cosine_lr(long step, long total_steps, long warmup_steps, double peak) {
  if (warmup_steps > 0 && step < warmup_steps)
    return peak * static_cast<double>(step + 1) / warmup_steps;
  if (total_steps <= warmup_steps) return peak;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, progress)));
}

}  // namespace arcs::ad
