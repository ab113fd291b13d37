#include "arcs/rank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

namespace arcs {

using ad::Mat;

std::string RewardModelConfig::to_json() const {
  nlohmann::json j;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["max_len"] = max_len;
  return j.dump();
}

RewardModelConfig RewardModelConfig::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  RewardModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_len = j.at("max_len").get<int>();
  return c;
}

namespace {

constexpr double kInitStd = 0.02;

Mat normal_mat(long rows, long cols, std::mt19937_64& rng, double std_dev) {
  std::normal_distribution<double> dist(0.0, std_dev);
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

}  // namespace

RewardModelParams init_reward_model(const RewardModelConfig& cfg,
                                    uint64_t seed) {
  if (cfg.d_model % cfg.n_heads != 0)
    throw Error(Errc::BadConfig, "d_model must be divisible by n_heads");
  std::mt19937_64 rng(seed);
  RewardModelParams p;
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
  p.pos_emb = normal("pos_emb", cfg.max_len, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    RewardModelParams::LayerIdx idx;
    idx.attn_norm = ones(pre + "attn_norm", d);
    idx.wq = normal(pre + "wq", d, d);
    idx.wk = normal(pre + "wk", d, d);
    idx.wv = normal(pre + "wv", d, d);
    idx.wo = normal(pre + "wo", d, d);
    idx.ffn_norm = ones(pre + "ffn_norm", d);
    idx.w1 = normal(pre + "w1", d, cfg.d_ff);
    idx.w3 = normal(pre + "w3", d, cfg.d_ff);
    idx.w2 = normal(pre + "w2", cfg.d_ff, d);
    p.layers.push_back(idx);
  }
  p.final_norm = ones("final_norm", d);
  p.mlp_w1 = normal("head.w1", d, d);
  p.mlp_b1 = zeros("head.b1", 1, d);
  p.mlp_w2 = normal("head.w2", d, 1);
  p.mlp_b2 = zeros("head.b2", 1, 1);
  return p;
}

SvdWarmStart svd_warm_start(const Eigen::MatrixXd& embeddings,
                            int target_dim) {
  SvdWarmStart out;
  const long rows = embeddings.rows();
  Eigen::JacobiSVD<Mat> svd(embeddings,
                            Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& singular = svd.singularValues();
  const long available = singular.size();
  long rank = 0;
  const double tol = 1e-12 * (singular.size() > 0 ? singular(0) : 0.0);
  for (long i = 0; i < available; ++i)
    if (singular(i) > tol) ++rank;
  const long keep = std::min<long>(target_dim, rank);
  out.degenerate = keep < target_dim;

  out.projected = Mat::Zero(rows, target_dim);
  for (long k = 0; k < keep; ++k) {
    Eigen::VectorXd col = svd.matrixU().col(k) * singular(k);
    // Sign convention: the largest-magnitude entry of each column is
    // positive (ties resolved by the lowest row index).
    long arg = 0;
    for (long r = 1; r < rows; ++r)
      if (std::abs(col(r)) > std::abs(col(arg))) arg = r;
    if (col(arg) < 0.0) col = -col;
    out.projected.col(k) = col;
  }
  return out;
}

void warm_start_embeddings(RewardModelParams& rm,
                           const Eigen::MatrixXd& generator_embeddings) {
  SvdWarmStart ws =
      svd_warm_start(generator_embeddings, rm.config.d_model);
  rm.store[rm.tok_emb].value = ws.projected;
}

namespace {

// Shared forward: returns the scalar prediction node (tape mode) and,
// for plain evaluation, the predicted value.
int rm_tape_forward(ad::Tape& tape, const std::vector<int>& leaf,
                    const RewardModelParams& p, const TokenSequence& seq) {
  const Vocabulary& vocab = Vocabulary::instance();
  const RewardModelConfig& cfg = p.config;
  const int dk = cfg.d_model / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<int> ids;
  std::vector<int> pos;
  std::vector<uint8_t> keep;
  for (size_t i = 0; i < seq.size() && i < static_cast<size_t>(cfg.max_len);
       ++i) {
    ids.push_back(seq[i]);
    pos.push_back(static_cast<int>(i));
    keep.push_back(seq[i] != vocab.pad_id());
  }
  if (ids.empty()) throw Error(Errc::InvalidSequence, "empty sequence");

  // PAD rows are excluded from attention and pooling.
  const long n = static_cast<long>(ids.size());
  Mat attn_mask = Mat::Zero(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      if (!keep[j]) attn_mask(i, j) = ad::kNegInf;

  int x = tape.add(tape.gather_rows(leaf[p.tok_emb], ids),
                   tape.gather_rows(leaf[p.pos_emb], pos));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = p.layers[l];
    int h = tape.rmsnorm(x, leaf[L.attn_norm]);
    int q = tape.matmul(h, leaf[L.wq]);
    int k = tape.matmul(h, leaf[L.wk]);
    int v = tape.matmul(h, leaf[L.wv]);
    std::vector<int> heads;
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      int qh = tape.slice_cols(q, hd * dk, dk);
      int kh = tape.slice_cols(k, hd * dk, dk);
      int vh = tape.slice_cols(v, hd * dk, dk);
      int scores = tape.add_const(tape.scale(tape.matmul_nt(qh, kh), scale),
                                  attn_mask);
      heads.push_back(tape.matmul(tape.softmax_rows(scores), vh));
    }
    x = tape.add(x, tape.matmul(tape.hstack(heads), leaf[L.wo]));
    int h2 = tape.rmsnorm(x, leaf[L.ffn_norm]);
    int ff = tape.matmul(tape.hadamard(tape.silu(tape.matmul(h2, leaf[L.w1])),
                                       tape.matmul(h2, leaf[L.w3])),
                         leaf[L.w2]);
    x = tape.add(x, ff);
  }
  int hf = tape.rmsnorm(x, leaf[p.final_norm]);
  int pooled = tape.mean_rows(hf, keep);
  int h1 = tape.silu(
      tape.add_rowvec(tape.matmul(pooled, leaf[p.mlp_w1]), leaf[p.mlp_b1]));
  return tape.add_rowvec(tape.matmul(h1, leaf[p.mlp_w2]), leaf[p.mlp_b2]);
}

std::vector<int> rm_leaves(ad::Tape& tape, RewardModelParams& p,
                           bool with_grad) {
  std::vector<int> ids;
  for (auto& t : p.store.tensors)
    ids.push_back(with_grad ? tape.leaf(t.value, &t.grad)
                            : tape.constant(t.value));
  return ids;
}

}  // namespace

double predict_reward(const RewardModelParams& rm, const TokenSequence& seq) {
  ad::Tape tape;
  auto& mut = const_cast<RewardModelParams&>(rm);
  std::vector<int> leaf = rm_leaves(tape, mut, false);
  return tape.val(rm_tape_forward(tape, leaf, rm, seq))(0, 0);
}

double huber_loss(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

double pearson_correlation(const std::vector<double>& a,
                           const std::vector<double>& b) {
  const size_t n = a.size();
  if (n < 2 || b.size() != n) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t i, size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * (i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_correlation(const std::vector<double>& a,
                            const std::vector<double>& b) {
  return pearson_correlation(average_ranks(a), average_ranks(b));
}

RewardModelMetrics evaluate_reward_model(
    const RewardModelParams& rm, const std::vector<LabeledSequence>& dataset) {
  RewardModelMetrics m;
  std::vector<double> pred, truth;
  double abs_sum = 0.0, sq_sum = 0.0;
  long within_half = 0, within_one = 0;
  for (const auto& item : dataset) {
    const double p = predict_reward(rm, item.tokens);
    pred.push_back(p);
    truth.push_back(item.reward);
    const double err = std::abs(p - item.reward);
    abs_sum += err;
    sq_sum += err * err;
    within_half += err <= 0.5;
    within_one += err <= 1.0;
  }
  const double n = static_cast<double>(dataset.size());
  if (n > 0) {
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    m.within_half = within_half / n;
    m.within_one = within_one / n;
    m.pearson_r = pearson_correlation(pred, truth);
    m.spearman_rho = spearman_correlation(pred, truth);
  }
  return m;
}

RewardModelTrainResult train_reward_model(
    RewardModelParams& rm, const std::vector<LabeledSequence>& dataset,
    const RewardModelTrainConfig& cfg) {
  if (dataset.empty()) throw Error(Errc::EmptyBatch, "empty dataset");
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const size_t holdout =
      std::min(dataset.size() - 1,
               static_cast<size_t>(cfg.holdout_frac * dataset.size()));
  std::vector<LabeledSequence> train, held;
  for (size_t i = 0; i < order.size(); ++i)
    (i < holdout ? held : train).push_back(dataset[order[i]]);

  RewardModelTrainResult result;
  ad::AdamWConfig adamw;
  adamw.beta2 = 0.999;
  const long batches =
      (static_cast<long>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);  // reuse as batch order
    std::vector<size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);

    double epoch_loss = 0.0;
    for (long b = 0; b < batches; ++b) {
      const size_t begin = b * cfg.batch_size;
      const size_t end =
          std::min(train.size(), begin + static_cast<size_t>(cfg.batch_size));
      if (begin >= end) continue;

      ad::Tape tape;
      std::vector<int> leaf = rm_leaves(tape, rm, true);
      int loss = -1;
      for (size_t i = begin; i < end; ++i) {
        int pred = rm_tape_forward(tape, leaf, rm, train[idx[i]].tokens);
        int h = tape.huber(pred, train[idx[i]].reward, cfg.huber_delta);
        loss = loss < 0 ? h : tape.add(loss, h);
      }
      loss = tape.scale(loss, 1.0 / static_cast<double>(end - begin));
      rm.store.zero_grad();
      tape.backward(loss);
      const double lr =
          ad::cosine_lr(step, batches * cfg.epochs,
                        std::max<long>(1, batches * cfg.epochs / 20), cfg.lr);
      ad::adamw_step(rm.store, lr, adamw, step + 1);
      epoch_loss += tape.val(loss)(0, 0);
      ++step;
    }
    result.epoch_loss.push_back(epoch_loss / std::max<long>(1, batches));
  }
  result.holdout = evaluate_reward_model(rm, held);
  return result;
}

void save_reward_model(const std::string& path, const RewardModelParams& rm) {
  save_checkpoint(path, "reward_model", rm.config.to_json(), rm.store);
}

RewardModelParams load_reward_model(const std::string& path) {
  auto [kind, config_json] = peek_checkpoint(path);
  if (kind != "reward_model")
    throw Error(Errc::CheckpointMismatch, path + " holds a " + kind);
  RewardModelParams rm =
      init_reward_model(RewardModelConfig::from_json(config_json), 0);
  load_checkpoint(path, rm.store);
  return rm;
}

// ---------------------------------------------------------------------------
// Best-of-N

RankerKind parse_ranker(std::string_view s) {
  if (s == "conf" || s == "confidence") return RankerKind::Confidence;
  if (s == "rm" || s == "reward_model") return RankerKind::RewardModel;
  if (s == "spice") return RankerKind::Spice;
  throw Error(Errc::BadConfig, "unknown ranker " + std::string(s));
}

const char* ranker_name(RankerKind k) {
  switch (k) {
    case RankerKind::Confidence: return "confidence";
    case RankerKind::RewardModel: return "reward_model";
    case RankerKind::Spice: return "spice";
  }
  return "?";
}

BestOfNResult best_of_n(const std::vector<CandidateGenerator>& sources,
                        const std::map<std::string, double>& spec,
                        int n_per_source, RankerKind ranker,
                        const RewardModelParams* rm, SimBackend backend,
                        const SpiceConfig& spice) {
  if (sources.empty()) throw Error(Errc::BadConfig, "no candidate sources");
  if (n_per_source < 1)
    throw Error(Errc::BadConfig, "need at least one candidate per source");
  if (ranker == RankerKind::RewardModel && rm == nullptr)
    throw Error(Errc::BadConfig, "reward-model ranker without a model");

  BestOfNResult result;
  for (size_t s = 0; s < sources.size(); ++s) {
    for (int i = 0; i < n_per_source; ++i) {
      GenerationResult gen = sources[s]();
      RankedCandidate cand;
      cand.tokens = gen.tokens;
      cand.source = static_cast<int>(s);
      cand.mean_log_prob = gen.mean_log_prob;
      cand.scored_by = ranker;
      DecodeResult decoded = decode_sequence(gen.tokens);
      if (decoded.ok()) cand.design = *decoded.design;
      switch (ranker) {
        case RankerKind::Confidence:
          cand.score = gen.mean_log_prob;
          break;
        case RankerKind::RewardModel:
          cand.score = predict_reward(*rm, gen.tokens);
          break;
        case RankerKind::Spice: {
          double score = 0.0;
          if (decoded.ok()) {
            CircuitDesign d = *decoded.design;
            d.spec = spec;  // score against the requested targets
            score = evaluate_design(d, backend, spice).total;
            ++result.spice_evaluations;
          }
          cand.score = score;
          break;
        }
      }
      result.candidates.push_back(std::move(cand));
    }
  }
  size_t best = 0;
  for (size_t i = 1; i < result.candidates.size(); ++i)
    if (result.candidates[i].score > result.candidates[best].score) best = i;
  result.winner = result.candidates[best];
  return result;
}

}  // namespace arcs
