#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "arcs/common.hpp"

namespace arcs::ad {

using Mat = Eigen::MatrixXd;

constexpr double kRmsEps = 1e-6;
constexpr double kNegInf = -1e30;  // additive mask value; exp() underflows to 0

// Reverse-mode tape over dense double matrices. Ops append nodes; a
// backward() pass runs the recorded closures in reverse. Leaves may point
// at external gradient sinks (parameter .grad buffers).
class Tape {
 public:
  int leaf(const Mat& value, Mat* grad_sink);
  int constant(Mat value);

  const Mat& val(int node) const { return nodes_[node].val; }
  Mat& grad(int node);

  void backward(int loss_node);  // loss must be 1x1

  // --- ops -------------------------------------------------------------
  int matmul(int a, int b);
  int matmul_nt(int a, int b);  // a * b^T
  int matmul_const_left(const Mat& c, int b);
  int add(int a, int b);
  int add_const(int a, const Mat& c);
  int add_rowvec(int a, int bias);  // bias 1 x cols, broadcast over rows
  int scale(int a, double s);
  int hadamard(int a, int b);
  int slice_cols(int a, int j0, int n);
  int hstack(const std::vector<int>& parts);
  int gather_rows(int src, std::vector<int> ids);
  int rmsnorm(int x, int gain);  // gain 1 x cols
  int silu(int x);
  int gelu(int x);
  int softmax_rows(int x);
  // out = scalar_node(0,0) * pattern
  int scalar_times_const(int scalar_node, const Mat& pattern);
  // rows of a where flags[r]==0, rows of b where flags[r]==1
  int row_select(int a, int b, std::vector<uint8_t> flags);
  // mean of the rows with include[r]==1 -> 1 x cols
  int mean_rows(int x, std::vector<uint8_t> include);
  // sum_t coeffs[t] * logsoftmax(z_t + logmask_t)[targets[t]] -> 1x1.
  // logmask may be empty (no masking).
  int weighted_logprob(int logits, std::vector<int> targets,
                       std::vector<double> coeffs, Mat logmask = {});
  // sum over rows of KL(softmax(z+lm) || softmax(ref+lm)) -> 1x1
  int kl_vs_ref(int logits, const Mat& ref_logits, const Mat& logmask);
  int huber(int pred /*1x1*/, double target, double delta);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    bool requires_grad = false;
    Mat* external_grad = nullptr;
    std::function<void()> back;  // may be empty for leaves/constants
  };

  int push(Mat value, bool requires_grad);
  std::vector<Node> nodes_;
};

// A named trainable tensor with its gradient and Adam moments.
struct NamedTensor {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;

  explicit NamedTensor(std::string n, Mat v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Mat::Zero(value.rows(), value.cols())),
        adam_m(Mat::Zero(value.rows(), value.cols())),
        adam_v(Mat::Zero(value.rows(), value.cols())) {}
};

// Ordered collection of named tensors; registration order is the
// checkpoint and finite-difference iteration order.
struct ParamStore {
  std::vector<NamedTensor> tensors;

  int add(const std::string& name, Mat value) {
    tensors.emplace_back(name, std::move(value));
    return static_cast<int>(tensors.size()) - 1;
  }
  NamedTensor& operator[](int i) { return tensors[i]; }
  const NamedTensor& operator[](int i) const { return tensors[i]; }
  NamedTensor* find(const std::string& name);
  const NamedTensor* find(const std::string& name) const;
  void zero_grad();
  long parameter_count() const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;  // applied to 2-D weight matrices only
};

// One decoupled-weight-decay Adam step over every tensor in the store.
void adamw_step(ParamStore& params, double lr, const AdamWConfig& cfg,
                long step_number);

// Cosine decay to zero with linear warmup.
double cosine_lr(long step, long total_steps, long warmup_steps, double peak);

}  // namespace arcs::ad
