#include "arcs/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace arcs {

using ad::Mat;

const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::Baseline: return "baseline";
    case ModelVariant::TwoHead: return "two_head";
    case ModelVariant::Graph: return "graph";
  }
  return "?";
}

ModelVariant parse_variant(std::string_view s) {
  if (s == "baseline") return ModelVariant::Baseline;
  if (s == "two_head") return ModelVariant::TwoHead;
  if (s == "graph") return ModelVariant::Graph;
  throw Error(Errc::BadConfig, "unknown variant " + std::string(s));
}

ModelConfig ModelConfig::desk(ModelVariant v) {
  ModelConfig c;
  c.d_model = 64;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 128;
  c.variant = v;
  return c;
}

ModelConfig ModelConfig::paper(ModelVariant v) {
  ModelConfig c;
  c.d_model = 256;
  c.n_layers = 6;
  c.n_heads = 4;
  c.d_ff = 1024;
  c.variant = v;
  return c;
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["variant"] = variant_name(variant);
  j["rwpe_k"] = rwpe_k;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.rwpe_k = j.at("rwpe_k").get<int>();
  return c;
}

namespace {

constexpr double kInitStd = 0.02;
constexpr int kRwpeHidden = 64;

Mat normal_mat(long rows, long cols, std::mt19937_64& rng, double std_dev) {
  std::normal_distribution<double> dist(0.0, std_dev);
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

// Walks a token stream and binds component/value positions to template
// slots (next unfilled slot of the emitted type, template order).
struct SlotBinder {
  const TopologyTemplate* tmpl = nullptr;
  std::vector<uint8_t> filled;
  int sep_count = 0;
  int pending_slot = -1;

  explicit SlotBinder(const TopologyTemplate* t) : tmpl(t) {
    if (tmpl) filled.assign(tmpl->slots.size(), 0);
  }

  int feed(TokenId token) {
    const Vocabulary& vocab = Vocabulary::instance();
    if (token == vocab.sep_id()) {
      ++sep_count;
      return -1;
    }
    if (!tmpl || sep_count < 2) return -1;
    if (vocab.is_component(token)) {
      const std::string& type = vocab.name(token);
      pending_slot = -1;
      for (size_t i = 0; i < tmpl->slots.size(); ++i) {
        if (!filled[i] && tmpl->slots[i].type == type) {
          pending_slot = static_cast<int>(i);
          filled[i] = 1;
          break;
        }
      }
      return pending_slot;
    }
    if (vocab.is_value(token)) {
      const int slot = pending_slot;
      pending_slot = -1;
      return slot;
    }
    pending_slot = -1;
    return -1;
  }
};

struct SequenceContext {
  std::string topology;
  const TopologyTemplate* tmpl = nullptr;
  std::vector<int> types;
  std::vector<int> slot_of;
  std::vector<uint8_t> value_head_rows;
  Mat a_pos;        // T x T (graph variant only)
  Mat rwpe_select;  // T x slots (graph variant only)
};

SequenceContext build_context(const ModelParams& p, const TokenSequence& toks,
                              std::string topology) {
  const Vocabulary& vocab = Vocabulary::instance();
  SequenceContext ctx;
  if (topology.empty()) {
    for (TokenId t : toks)
      if (vocab.is_topology(t)) {
        topology = vocab.topology_name_of(t);
        break;
      }
  }
  ctx.topology = topology;
  if (p.config.variant == ModelVariant::Graph) {
    ctx.tmpl = &get_template(topology);  // throws UnknownTopology
  }

  const long n = static_cast<long>(toks.size());
  ctx.types.reserve(n);
  ctx.value_head_rows.reserve(n);
  for (TokenId t : toks) {
    const TokenCategory cat = vocab.category(t);
    ctx.types.push_back(static_cast<int>(cat));
    ctx.value_head_rows.push_back(cat == TokenCategory::Component ||
                                  cat == TokenCategory::Spec);
  }

  SlotBinder binder(ctx.tmpl);
  ctx.slot_of.reserve(n);
  for (TokenId t : toks) ctx.slot_of.push_back(binder.feed(t));

  if (ctx.tmpl) {
    ctx.a_pos = Mat::Zero(n, n);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < n; ++j)
        if (ctx.slot_of[i] >= 0 && ctx.slot_of[j] >= 0)
          ctx.a_pos(i, j) = ctx.tmpl->adjacency(ctx.slot_of[i], ctx.slot_of[j]);
    ctx.rwpe_select = Mat::Zero(n, ctx.tmpl->slot_count());
    for (long i = 0; i < n; ++i)
      if (ctx.slot_of[i] >= 0) ctx.rwpe_select(i, ctx.slot_of[i]) = 1.0;
  }
  return ctx;
}

Mat causal_mask(long n) {
  Mat m = Mat::Zero(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = i + 1; j < n; ++j) m(i, j) = ad::kNegInf;
  return m;
}

// Leaf node ids for every tensor in the store, in registration order.
std::vector<int> make_leaves(ad::Tape& tape, ModelParams& params,
                             bool with_grad) {
  std::vector<int> ids;
  ids.reserve(params.store.tensors.size());
  for (auto& t : params.store.tensors)
    ids.push_back(with_grad ? tape.leaf(t.value, &t.grad)
                            : tape.constant(t.value));
  return ids;
}

// Full teacher-forced forward on a tape; returns the logits node.
int tape_forward(ad::Tape& tape, const std::vector<int>& leaf,
                 const ModelParams& p, const TokenSequence& toks,
                 const SequenceContext& ctx) {
  const ModelConfig& cfg = p.config;
  const long n = static_cast<long>(toks.size());
  const int dk = cfg.d_model / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<int> ids(toks.begin(), toks.end());
  int x = tape.add(tape.gather_rows(leaf[p.tok_emb], ids),
                   tape.gather_rows(leaf[p.type_emb], ctx.types));

  if (cfg.variant == ModelVariant::Graph) {
    const Mat feats = compute_rwpe(*ctx.tmpl, cfg.rwpe_k).probs;
    int h = tape.add_rowvec(tape.matmul_const_left(feats, leaf[p.rwpe_w1]),
                            leaf[p.rwpe_b1]);
    int proj = tape.add_rowvec(tape.matmul(tape.gelu(h), leaf[p.rwpe_w2]),
                               leaf[p.rwpe_b2]);
    x = tape.add(x, tape.matmul_const_left(ctx.rwpe_select, proj));
  }

  const Mat cmask = causal_mask(n);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = p.layers[l];
    int h = tape.rmsnorm(x, leaf[L.attn_norm]);
    int q = tape.matmul(h, leaf[L.wq]);
    int k = tape.matmul(h, leaf[L.wk]);
    int v = tape.matmul(h, leaf[L.wv]);
    std::vector<int> head_outs;
    head_outs.reserve(cfg.n_heads);
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      int qh = tape.slice_cols(q, hd * dk, dk);
      int kh = tape.slice_cols(k, hd * dk, dk);
      int vh = tape.slice_cols(v, hd * dk, dk);
      int scores = tape.scale(tape.matmul_nt(qh, kh), scale);
      scores = tape.add_const(scores, cmask);
      if (cfg.variant == ModelVariant::Graph)
        scores = tape.add(
            scores, tape.scalar_times_const(leaf[L.gbias[hd]], ctx.a_pos));
      head_outs.push_back(tape.matmul(tape.softmax_rows(scores), vh));
    }
    int attn = tape.matmul(tape.hstack(head_outs), leaf[L.wo]);
    x = tape.add(x, attn);

    int h2 = tape.rmsnorm(x, leaf[L.ffn_norm]);
    int gate = tape.silu(tape.matmul(h2, leaf[L.w1]));
    int up = tape.matmul(h2, leaf[L.w3]);
    int ff = tape.matmul(tape.hadamard(gate, up), leaf[L.w2]);
    x = tape.add(x, ff);
  }

  int hf = tape.rmsnorm(x, leaf[p.final_norm]);
  int struct_logits = tape.matmul_nt(hf, leaf[p.tok_emb]);
  if (!p.two_headed()) return struct_logits;

  int h1 = tape.silu(
      tape.add_rowvec(tape.matmul(hf, leaf[p.vh_w1]), leaf[p.vh_b1]));
  int h2 = tape.add_rowvec(tape.matmul(h1, leaf[p.vh_w2]), leaf[p.vh_b2]);
  int hv = tape.add(hf, h2);
  int value_logits =
      tape.add_rowvec(tape.matmul(hv, leaf[p.vh_wout]), leaf[p.vh_bout]);
  return tape.row_select(struct_logits, value_logits, ctx.value_head_rows);
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg, uint64_t seed) {
  if (cfg.d_model <= 0 || cfg.n_layers <= 0 || cfg.n_heads <= 0 ||
      cfg.d_ff <= 0 || cfg.d_model % cfg.n_heads != 0)
    throw Error(Errc::BadConfig, "d_model must be divisible by n_heads");
  if (cfg.rwpe_k <= 0) throw Error(Errc::BadConfig, "rwpe_k must be positive");

  std::mt19937_64 rng(seed);
  ModelParams p;
  p.config = cfg;
  const int d = cfg.d_model;
  auto normal = [&](const std::string& name, long r, long c) {
    return p.store.add(name, normal_mat(r, c, rng, kInitStd));
  };
  auto ones = [&](const std::string& name, long c) {
    return p.store.add(name, Mat::Ones(1, c));
  };
  auto zeros = [&](const std::string& name, long r, long c) {
    return p.store.add(name, Mat::Zero(r, c));
  };

  p.tok_emb = normal("tok_emb", kVocabSize, d);
  p.type_emb = normal("type_emb", kNumCategories, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    ModelParams::LayerIdx idx;
    idx.attn_norm = ones(pre + "attn_norm", d);
    idx.wq = normal(pre + "wq", d, d);
    idx.wk = normal(pre + "wk", d, d);
    idx.wv = normal(pre + "wv", d, d);
    idx.wo = normal(pre + "wo", d, d);
    idx.ffn_norm = ones(pre + "ffn_norm", d);
    idx.w1 = normal(pre + "w1", d, cfg.d_ff);
    idx.w3 = normal(pre + "w3", d, cfg.d_ff);
    idx.w2 = normal(pre + "w2", cfg.d_ff, d);
    if (cfg.variant == ModelVariant::Graph) {
      for (int h = 0; h < cfg.n_heads; ++h)
        idx.gbias.push_back(zeros(pre + "gbias" + std::to_string(h), 1, 1));
    }
    p.layers.push_back(std::move(idx));
  }
  p.final_norm = ones("final_norm", d);
  if (cfg.variant != ModelVariant::Baseline) {
    p.vh_w1 = normal("vhead.w1", d, d);
    p.vh_b1 = zeros("vhead.b1", 1, d);
    p.vh_w2 = normal("vhead.w2", d, d);
    p.vh_b2 = zeros("vhead.b2", 1, d);
    p.vh_wout = normal("vhead.wout", d, kVocabSize);
    p.vh_bout = zeros("vhead.bout", 1, kVocabSize);
  }
  if (cfg.variant == ModelVariant::Graph) {
    p.rwpe_w1 = normal("rwpe.w1", cfg.rwpe_k, kRwpeHidden);
    p.rwpe_b1 = zeros("rwpe.b1", 1, kRwpeHidden);
    p.rwpe_w2 = normal("rwpe.w2", kRwpeHidden, d);
    p.rwpe_b2 = zeros("rwpe.b2", 1, d);
  }
  return p;
}

Eigen::MatrixXd forward_logits(const ModelParams& params,
                               const TokenSequence& tokens,
                               const std::string& topology,
                               bool use_training_path) {
  if (use_training_path) {
    ad::Tape tape;
    auto& mut = const_cast<ModelParams&>(params);
    std::vector<int> leaf = make_leaves(tape, mut, /*with_grad=*/false);
    SequenceContext ctx = build_context(params, tokens, topology);
    return tape.val(tape_forward(tape, leaf, params, tokens, ctx));
  }
  InferenceSession session(params, topology);
  Mat logits(tokens.size(), kVocabSize);
  for (size_t t = 0; t < tokens.size(); ++t)
    logits.row(t) = session.feed(tokens[t]);
  return logits;
}

// ---------------------------------------------------------------------------
// InferenceSession

namespace {

Eigen::RowVectorXd rmsnorm_row(const Eigen::RowVectorXd& x, const Mat& gain) {
  const double inv =
      1.0 / std::sqrt(x.squaredNorm() / x.cols() + ad::kRmsEps);
  return (x * inv).cwiseProduct(gain.row(0));
}

}  // namespace

InferenceSession::InferenceSession(const ModelParams& params,
                                   const std::string& topology)
    : p_(params) {
  if (p_.config.variant == ModelVariant::Graph) {
    tmpl_ = &get_template(topology);
    const Mat feats = compute_rwpe(*tmpl_, p_.config.rwpe_k).probs;
    const Mat h =
        ((feats * p_.store[p_.rwpe_w1].value).rowwise() +
         Eigen::RowVectorXd(p_.store[p_.rwpe_b1].value.row(0)))
            .eval();
    Mat g(h.rows(), h.cols());
    for (long r = 0; r < h.rows(); ++r)
      for (long c = 0; c < h.cols(); ++c)
        g(r, c) = h(r, c) * 0.5 * (1.0 + std::erf(h(r, c) / std::sqrt(2.0)));
    rwpe_rows_ = (g * p_.store[p_.rwpe_w2].value).rowwise() +
                 Eigen::RowVectorXd(p_.store[p_.rwpe_b2].value.row(0));
    filled_.assign(tmpl_->slots.size(), 0);
  }
  k_cache_.assign(p_.config.n_layers, Mat(0, p_.config.d_model));
  v_cache_.assign(p_.config.n_layers, Mat(0, p_.config.d_model));
}

Eigen::RowVectorXd InferenceSession::feed(TokenId token) {
  const Vocabulary& vocab = Vocabulary::instance();
  const ModelConfig& cfg = p_.config;
  const int d = cfg.d_model;
  const int dk = d / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  // Slot binding (mirrors SlotBinder).
  int slot = -1;
  if (token == vocab.sep_id()) {
    ++sep_count_;
  } else if (tmpl_ && sep_count_ >= 2) {
    if (vocab.is_component(token)) {
      const std::string& type = vocab.name(token);
      pending_slot_ = -1;
      for (size_t i = 0; i < tmpl_->slots.size(); ++i) {
        if (!filled_[i] && tmpl_->slots[i].type == type) {
          pending_slot_ = static_cast<int>(i);
          filled_[i] = 1;
          break;
        }
      }
      slot = pending_slot_;
    } else if (vocab.is_value(token)) {
      slot = pending_slot_;
      pending_slot_ = -1;
    } else {
      pending_slot_ = -1;
    }
  }

  const int type = static_cast<int>(vocab.category(token));
  Eigen::RowVectorXd x = p_.store[p_.tok_emb].value.row(token) +
                         p_.store[p_.type_emb].value.row(type);
  if (tmpl_ && slot >= 0) x += rwpe_rows_.row(slot);

  const long t = static_cast<long>(fed_.size());
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = p_.layers[l];
    const Eigen::RowVectorXd h = rmsnorm_row(x, p_.store[L.attn_norm].value);
    const Eigen::RowVectorXd q = h * p_.store[L.wq].value;
    Mat& kc = k_cache_[l];
    Mat& vc = v_cache_[l];
    kc.conservativeResize(t + 1, d);
    vc.conservativeResize(t + 1, d);
    kc.row(t) = h * p_.store[L.wk].value;
    vc.row(t) = h * p_.store[L.wv].value;

    Eigen::RowVectorXd attn(d);
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      Eigen::VectorXd scores =
          (kc.middleCols(hd * dk, dk) * q.segment(hd * dk, dk).transpose()) *
          scale;
      if (tmpl_ && slot >= 0) {
        const double b = p_.store[L.gbias[hd]].value(0, 0);
        if (b != 0.0) {
          for (long j = 0; j < t; ++j)
            if (slot_of_[j] >= 0)
              scores(j) += b * tmpl_->adjacency(slot, slot_of_[j]);
          // scores(t) gains nothing: the adjacency diagonal is zero.
        }
      }
      const double m = scores.maxCoeff();
      Eigen::VectorXd w = (scores.array() - m).exp();
      w /= w.sum();
      attn.segment(hd * dk, dk) =
          (w.transpose() * vc.middleCols(hd * dk, dk));
    }
    x += attn * p_.store[L.wo].value;

    const Eigen::RowVectorXd h2 = rmsnorm_row(x, p_.store[L.ffn_norm].value);
    Eigen::RowVectorXd gate = h2 * p_.store[L.w1].value;
    for (long c = 0; c < gate.cols(); ++c)
      gate(c) = gate(c) / (1.0 + std::exp(-gate(c)));
    const Eigen::RowVectorXd up = h2 * p_.store[L.w3].value;
    x += gate.cwiseProduct(up) * p_.store[L.w2].value;
  }

  fed_.push_back(token);
  slot_of_.push_back(slot);

  const Eigen::RowVectorXd hf = rmsnorm_row(x, p_.store[p_.final_norm].value);
  const TokenCategory cat = vocab.category(token);
  const bool use_value_head =
      p_.two_headed() &&
      (cat == TokenCategory::Component || cat == TokenCategory::Spec);
  if (!use_value_head) return hf * p_.store[p_.tok_emb].value.transpose();

  Eigen::RowVectorXd h1 =
      hf * p_.store[p_.vh_w1].value + p_.store[p_.vh_b1].value.row(0);
  for (long c = 0; c < h1.cols(); ++c) h1(c) = h1(c) / (1.0 + std::exp(-h1(c)));
  const Eigen::RowVectorXd h2 =
      h1 * p_.store[p_.vh_w2].value + p_.store[p_.vh_b2].value.row(0);
  const Eigen::RowVectorXd hv = hf + h2;
  return hv * p_.store[p_.vh_wout].value + p_.store[p_.vh_bout].value.row(0);
}

// ---------------------------------------------------------------------------
// Losses and training

namespace {

TokenSequence strip_trailing_pad(const TokenSequence& toks) {
  const TokenId pad = Vocabulary::instance().pad_id();
  size_t n = toks.size();
  while (n > 0 && toks[n - 1] == pad) --n;
  return TokenSequence(toks.begin(), toks.begin() + n);
}

double sl_loss_impl(ModelParams& params, const std::vector<TokenSequence>& batch,
                    bool with_grad) {
  if (batch.empty()) throw Error(Errc::EmptyBatch, "sl_loss on empty batch");
  const Vocabulary& vocab = Vocabulary::instance();

  long total_positions = 0;
  std::vector<TokenSequence> seqs;
  seqs.reserve(batch.size());
  for (const auto& raw : batch) {
    seqs.push_back(strip_trailing_pad(raw));
    if (seqs.back().size() < 2)
      throw Error(Errc::EmptyBatch, "sequence too short to train on");
    total_positions += static_cast<long>(seqs.back().size()) - 1;
  }
  if (total_positions == 0)
    throw Error(Errc::EmptyBatch, "no non-pad targets in batch");

  ad::Tape tape;
  std::vector<int> leaf = make_leaves(tape, params, with_grad);
  int loss_sum = -1;
  for (const auto& toks : seqs) {
    SequenceContext ctx = build_context(params, toks, "");
    int logits = tape_forward(tape, leaf, params, toks, ctx);
    const long T = static_cast<long>(toks.size());
    std::vector<int> targets(T, 0);
    std::vector<double> coeffs(T, 0.0);
    for (long t = 0; t + 1 < T; ++t) {
      const TokenId target = toks[t + 1];
      if (target == vocab.pad_id()) continue;
      targets[t] = target;
      const double w = vocab.is_value(target) ? 5.0 : 1.0;
      coeffs[t] = -w / static_cast<double>(total_positions);
    }
    int term = tape.weighted_logprob(logits, targets, coeffs);
    loss_sum = loss_sum < 0 ? term : tape.add(loss_sum, term);
  }
  if (with_grad) tape.backward(loss_sum);
  return tape.val(loss_sum)(0, 0);
}

}  // namespace

double sl_loss(const ModelParams& params,
               const std::vector<TokenSequence>& batch) {
  return sl_loss_impl(const_cast<ModelParams&>(params), batch, false);
}

double sl_loss_backward(ModelParams& params,
                        const std::vector<TokenSequence>& batch) {
  return sl_loss_impl(params, batch, true);
}

TrainStats train_sl(ModelParams& params,
                    const std::vector<TokenSequence>& dataset,
                    const SlTrainConfig& cfg) {
  if (dataset.empty()) throw Error(Errc::EmptyBatch, "empty dataset");
  TrainStats stats;
  const long n = static_cast<long>(dataset.size());
  const long batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = batches_per_epoch * cfg.epochs;
  const long warmup =
      std::max<long>(1, std::lround(cfg.warmup_frac * total_steps));

  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    for (long b = 0; b < batches_per_epoch; ++b) {
      std::vector<TokenSequence> batch;
      for (long i = b * cfg.batch_size;
           i < std::min<long>(n, (b + 1) * cfg.batch_size); ++i)
        batch.push_back(dataset[order[i]]);
      if (batch.empty()) continue;

      params.store.zero_grad();
      const double loss = sl_loss_backward(params, batch);
      const double lr = ad::cosine_lr(step, total_steps, warmup, cfg.peak_lr);
      ad::adamw_step(params.store, lr, cfg.adamw, step + 1);
      stats.step_loss.push_back(loss);
      stats.step_lr.push_back(lr);
      epoch_loss += loss;
      ++epoch_batches;
      ++step;
    }
    stats.epoch_loss.push_back(epoch_loss / std::max<long>(1, epoch_batches));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Generation and scoring

TokenSequence encode_prefix(const std::string& topology,
                            const std::map<std::string, double>& spec) {
  CircuitDesign d;
  d.topology = topology;
  d.spec = spec;
  TokenSequence seq = encode_circuit(d);  // ... SEP END
  seq.pop_back();                         // drop END, keep the open prefix
  return seq;
}

GenerationResult generate(const ModelParams& params,
                          const std::string& topology,
                          const std::map<std::string, double>& spec,
                          const SamplingConfig& sampling) {
  const Vocabulary& vocab = Vocabulary::instance();
  GenerationResult result;
  result.tokens = encode_prefix(topology, spec);

  InferenceSession session(params, topology);
  Eigen::RowVectorXd logits;
  for (TokenId t : result.tokens) logits = session.feed(t);

  GrammarState state = init_state(topology, sampling.level, sampling.max_len);
  std::mt19937_64 rng(sampling.seed);
  while (true) {
    if (result.sampled_tokens >= sampling.max_len) {
      result.hit_budget = true;
      break;
    }
    TokenMask m = mask(state, vocab);
    std::vector<double> z(logits.data(), logits.data() + logits.cols());
    const std::vector<double> probs =
        masked_distribution(z, m, sampling.temperature, sampling.top_k);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng);
    double acc = 0.0;
    TokenId chosen = -1;
    for (int i = 0; i < kVocabSize; ++i) {
      if (probs[i] <= 0.0) continue;
      chosen = i;
      acc += probs[i];
      if (r < acc) break;
    }
    result.tokens.push_back(chosen);
    result.total_log_prob += std::log(probs[chosen]);
    ++result.sampled_tokens;
    state = advance(state, chosen);
    if (state.done()) break;
    if (sampling.level == ConstraintLevel::None && chosen == vocab.end_id())
      break;
    logits = session.feed(chosen);
  }
  result.mean_log_prob =
      result.sampled_tokens > 0
          ? result.total_log_prob / result.sampled_tokens
          : 0.0;
  return result;
}

namespace {

// Index of the first component-region token (after the second SEP).
int component_region_begin(const TokenSequence& toks) {
  const TokenId sep = Vocabulary::instance().sep_id();
  int seps = 0;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (toks[i] == sep && ++seps == 2) return static_cast<int>(i) + 1;
  }
  throw Error(Errc::InvalidSequence, "sequence has no component region");
}

Mat logmask_from(const TokenMask& m) {
  Mat row(1, kVocabSize);
  for (int i = 0; i < kVocabSize; ++i) row(0, i) = m[i] ? 0.0 : ad::kNegInf;
  return row;
}

}  // namespace

LogProbResult sequence_log_prob(const ModelParams& params,
                                const TokenSequence& tokens,
                                const std::string& topology,
                                ConstraintLevel level, double temperature,
                                int top_k) {
  ValidityReport report = validate_sequence(tokens, level, topology);
  if (!report.valid_at(level))
    throw Error(Errc::InvalidSequence,
                "sequence invalid at level " +
                    std::string(constraint_level_name(level)));

  const Vocabulary& vocab = Vocabulary::instance();
  const TokenSequence seq = strip_trailing_pad(tokens);
  const int begin = component_region_begin(seq);

  InferenceSession session(params, topology);
  Eigen::RowVectorXd logits;
  for (int i = 0; i < begin; ++i) logits = session.feed(seq[i]);

  GrammarState state = init_state(topology, level);
  LogProbResult out;
  for (size_t i = begin; i < seq.size(); ++i) {
    TokenMask m = mask(state, vocab);
    std::vector<double> z(logits.data(), logits.data() + logits.cols());
    const std::vector<double> probs =
        masked_distribution(z, m, temperature, top_k);
    const double pr = probs[seq[i]];
    if (pr <= 0.0)
      throw Error(Errc::InvalidSequence,
                  "token at position " + std::to_string(i) +
                      " has zero probability under the masked distribution");
    out.total += std::log(pr);
    ++out.positions;
    state = advance(state, seq[i]);
    if (state.done()) break;
    logits = session.feed(seq[i]);
  }
  out.mean = out.positions > 0 ? out.total / out.positions : 0.0;
  return out;
}

namespace {

struct RegionInfo {
  std::vector<int> rows;      // logits rows predicting region tokens
  std::vector<int> targets;   // the region tokens themselves
  Mat logmask;                // rows x vocab
};

RegionInfo region_masks(const TokenSequence& seq, const std::string& topology,
                        ConstraintLevel level) {
  const Vocabulary& vocab = Vocabulary::instance();
  const int begin = component_region_begin(seq);
  RegionInfo info;
  GrammarState state = init_state(topology, level);
  std::vector<Mat> rows;
  for (size_t i = begin; i < seq.size(); ++i) {
    TokenMask m = mask(state, vocab);
    info.rows.push_back(static_cast<int>(i) - 1);
    info.targets.push_back(seq[i]);
    rows.push_back(logmask_from(m));
    state = advance(state, seq[i]);
    if (state.done()) break;
  }
  info.logmask.resize(static_cast<long>(rows.size()), kVocabSize);
  for (size_t r = 0; r < rows.size(); ++r) info.logmask.row(r) = rows[r].row(0);
  return info;
}

}  // namespace

double kl_divergence(const ModelParams& params, const ModelParams& ref,
                     const TokenSequence& tokens, const std::string& topology,
                     ConstraintLevel level) {
  const TokenSequence seq = strip_trailing_pad(tokens);
  RegionInfo info = region_masks(seq, topology, level);
  const Mat pl = forward_logits(params, seq, topology);
  const Mat rl = forward_logits(ref, seq, topology);

  double total = 0.0;
  for (size_t r = 0; r < info.rows.size(); ++r) {
    const Eigen::RowVectorXd zp = pl.row(info.rows[r]) + info.logmask.row(r);
    const Eigen::RowVectorXd zq = rl.row(info.rows[r]) + info.logmask.row(r);
    const double mp = zp.maxCoeff(), mq = zq.maxCoeff();
    const double lp = mp + std::log((zp.array() - mp).exp().sum());
    const double lq = mq + std::log((zq.array() - mq).exp().sum());
    for (int x = 0; x < kVocabSize; ++x) {
      const double logp = zp(x) - lp;
      const double p = std::exp(logp);
      if (p > 0.0) total += p * (logp - (zq(x) - lq));
    }
  }
  return info.rows.empty() ? 0.0 : total / static_cast<double>(info.rows.size());
}

RlSurrogateStats rl_surrogate_backward(ModelParams& params,
                                       const ModelParams& ref,
                                       const std::vector<RlBatchItem>& batch,
                                       ConstraintLevel level, double beta,
                                       bool accumulate_grads) {
  if (batch.empty()) throw Error(Errc::EmptyBatch, "rl surrogate on empty batch");
  ad::Tape tape;
  std::vector<int> leaf = make_leaves(tape, params, accumulate_grads);

  int policy_sum = -1;
  int kl_sum = -1;
  for (const auto& item : batch) {
    const TokenSequence seq = strip_trailing_pad(item.tokens);
    SequenceContext ctx = build_context(params, seq, item.topology);
    RegionInfo info = region_masks(seq, item.topology, level);
    int logits = tape_forward(tape, leaf, params, seq, ctx);
    int region = tape.gather_rows(logits, info.rows);

    std::vector<int> targets(info.targets.size());
    std::vector<double> coeffs(info.targets.size(),
                               -item.coeff);  // minimize -coeff * logp
    for (size_t t = 0; t < info.targets.size(); ++t) targets[t] = info.targets[t];
    int pol = tape.weighted_logprob(region, targets, coeffs, info.logmask);
    policy_sum = policy_sum < 0 ? pol : tape.add(policy_sum, pol);

    const Mat ref_logits = forward_logits(ref, seq, item.topology);
    Mat ref_region(static_cast<long>(info.rows.size()), kVocabSize);
    for (size_t r = 0; r < info.rows.size(); ++r)
      ref_region.row(r) = ref_logits.row(info.rows[r]);
    int kl = tape.scale(tape.kl_vs_ref(region, ref_region, info.logmask),
                        1.0 / static_cast<double>(info.rows.size()));
    kl_sum = kl_sum < 0 ? kl : tape.add(kl_sum, kl);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  int mean_kl = tape.scale(kl_sum, inv_b);
  int loss = tape.add(policy_sum, tape.scale(mean_kl, beta));
  if (accumulate_grads) tape.backward(loss);

  RlSurrogateStats stats;
  stats.loss = tape.val(loss)(0, 0);
  stats.policy_term = tape.val(policy_sum)(0, 0);
  stats.mean_kl = tape.val(mean_kl)(0, 0);
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'A', 'R', 'C', 'S', 'C', 'K', 'P', '1'};

void write_string(std::ostream& out, const std::string& s) {
  const uint32_t n = static_cast<uint32_t>(s.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(s.data(), n);
}

std::string read_string(std::istream& in) {
  uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error(Errc::CheckpointMismatch, "truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json,
                     const ad::ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  write_string(out, kind);
  write_string(out, config_json);
  const uint32_t count = static_cast<uint32_t>(store.tensors.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& t : store.tensors) {
    write_string(out, t.name);
    const uint32_t r = static_cast<uint32_t>(t.value.rows());
    const uint32_t c = static_cast<uint32_t>(t.value.cols());
    out.write(reinterpret_cast<const char*>(&r), sizeof(r));
    out.write(reinterpret_cast<const char*>(&c), sizeof(c));
    for (long i = 0; i < t.value.rows(); ++i)
      out.write(reinterpret_cast<const char*>(t.value.row(i).eval().data()),
                sizeof(double) * t.value.cols());
  }
}

std::pair<std::string, std::string> peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw Error(Errc::CheckpointMismatch, path + " is not a checkpoint");
  std::string kind = read_string(in);
  std::string config = read_string(in);
  return {kind, config};
}

std::pair<std::string, std::string> load_checkpoint(const std::string& path,
                                                    ad::ParamStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw Error(Errc::CheckpointMismatch, path + " is not a checkpoint");
  std::string kind = read_string(in);
  std::string config = read_string(in);
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (count != store.tensors.size())
    throw Error(Errc::CheckpointMismatch, "tensor count mismatch");
  for (auto& t : store.tensors) {
    const std::string name = read_string(in);
    uint32_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), sizeof(r));
    in.read(reinterpret_cast<char*>(&c), sizeof(c));
    if (name != t.name || r != t.value.rows() || c != t.value.cols())
      throw Error(Errc::CheckpointMismatch,
                  "tensor " + t.name + " does not match checkpoint entry " +
                      name);
    std::vector<double> buf(static_cast<size_t>(r) * c);
    in.read(reinterpret_cast<char*>(buf.data()), sizeof(double) * buf.size());
    if (!in) throw Error(Errc::CheckpointMismatch, "truncated checkpoint");
    for (uint32_t i = 0; i < r; ++i)
      for (uint32_t j = 0; j < c; ++j) t.value(i, j) = buf[i * c + j];
  }
  return {kind, config};
}

void save_model(const std::string& path, const ModelParams& params) {
  save_checkpoint(path, "model", params.config.to_json(), params.store);
}

ModelParams load_model(const std::string& path) {
  auto [kind, config_json] = peek_checkpoint(path);
  if (kind != "model")
    throw Error(Errc::CheckpointMismatch, path + " holds a " + kind);
  ModelParams params = init_model(ModelConfig::from_json(config_json), 0);
  load_checkpoint(path, params.store);
  return params;
}

}  // namespace arcs
