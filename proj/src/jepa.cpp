#include "stylesplit/jepa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "stylesplit/ops.hpp"

namespace stylesplit {

std::size_t MaskSet::count() const {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.size();
  return n;
}

std::vector<std::size_t> MaskSet::flat_rows() const {
  std::vector<std::size_t> rows;
  rows.reserve(count());
  for (std::size_t b = 0; b < positions.size(); ++b)
    for (auto s : positions[b]) rows.push_back(b * seq_len + s);
  return rows;
}

MaskSet sample_mask(std::size_t seq_len, std::size_t batch, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("sample_mask: ratio must lie in (0,1), got " + std::to_string(ratio));
  }
  if (seq_len < 2 || batch == 0) throw std::invalid_argument("sample_mask: need seq_len >= 2 and batch >= 1");
  auto count = static_cast<std::size_t>(std::max(1L, std::lround(ratio * static_cast<double>(seq_len))));
  if (count >= seq_len) {
    throw std::invalid_argument("sample_mask: ratio " + std::to_string(ratio) + " hides the whole sequence");
  }
  MaskSet m;
  m.seq_len = seq_len;
  m.positions.resize(batch);
  std::vector<std::size_t> idx(seq_len);
  for (auto& pos : m.positions) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `count` entries are a uniform draw.
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, seq_len - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    pos.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(pos.begin(), pos.end());
  }
  return m;
}

Predictor::Predictor(std::size_t seq_len, std::size_t dim, std::size_t hidden, Rng& rng)
    : seq_len_(seq_len),
      dim_(dim),
      mask_token_(Tensor::zeros({dim}, true)),
      slot_embed_(init_weight({seq_len, dim}, dim, rng, 0.1)),
      mix_(init_weight({seq_len, seq_len}, seq_len, rng)),
      fc1_(dim, hidden, rng),
      fc2_(hidden, dim, rng),
      out_(dim, dim, rng) {}

Tensor Predictor::predict(const Tensor& tokens, const MaskSet& mask) const {
  if (tokens.dim() != 3 || tokens.size(1) != seq_len_ || tokens.size(2) != dim_) {
    throw std::invalid_argument("predict_masked: tokens " + shape_str(tokens.shape()) + " vs predictor [B," +
                                std::to_string(seq_len_) + "," + std::to_string(dim_) + "]");
  }
  std::size_t b = tokens.size(0);
  if (mask.seq_len != seq_len_ || mask.batch() != b) {
    throw std::invalid_argument("predict_masked: mask does not match the token batch");
  }
  std::vector<double> keep(b * seq_len_, 1.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (auto s : mask.positions[i]) {
      if (s >= seq_len_) throw std::invalid_argument("predict_masked: masked position " + std::to_string(s) + " out of range");
      keep[i * seq_len_ + s] = 0.0;
    }
  }
  Tensor keep_t({b, seq_len_, 1}, keep);
  Tensor hide_t = ops::add_scalar(ops::neg(keep_t), 1.0);
  Tensor x = ops::add(ops::mul(tokens, keep_t), ops::mul(mask_token_, hide_t));
  x = ops::add(x, slot_embed_);

  Tensor cols = ops::reshape(ops::permute(x, {0, 2, 1}), {b * dim_, seq_len_});
  Tensor mixed = ops::permute(ops::reshape(ops::linear(cols, mix_), {b, dim_, seq_len_}), {0, 2, 1});
  Tensor h = ops::reshape(ops::add(x, ops::leaky_relu(mixed)), {b * seq_len_, dim_});
  h = ops::add(h, fc2_(ops::leaky_relu(fc1_(h))));
  Tensor out = out_(h);
  auto rows = mask.flat_rows();
  return ops::index_select(out, 0, rows);
}

ParamList Predictor::parameters() const {
  ParamList out{{"pred.mask_token", mask_token_}, {"pred.slot_embed", slot_embed_}, {"pred.mix", mix_}};
  fc1_.collect(out, "pred.fc1");
  fc2_.collect(out, "pred.fc2");
  out_.collect(out, "pred.out");
  return out;
}

Tensor predict_masked(const Tensor& student_tokens, const MaskSet& mask, const Predictor& predictor) {
  return predictor.predict(student_tokens, mask);
}

Tensor jepa_mse(const Tensor& pred, const Tensor& target_tokens, const MaskSet& mask) {
  if (target_tokens.dim() != 3 || target_tokens.size(1) != mask.seq_len || target_tokens.size(0) != mask.batch()) {
    throw std::invalid_argument("jepa_mse: targets " + shape_str(target_tokens.shape()) + " do not match mask");
  }
  std::size_t b = target_tokens.size(0), s = target_tokens.size(1), d = target_tokens.size(2);
  if (pred.dim() != 2 || pred.size(0) != mask.count() || pred.size(1) != d) {
    throw std::invalid_argument("jepa_mse: predictions " + shape_str(pred.shape()) + " vs " +
                                std::to_string(mask.count()) + " masked tokens of width " + std::to_string(d));
  }
  Tensor target = ops::reshape(target_tokens.detach(), {b * s, d});
  auto rows = mask.flat_rows();
  Tensor picked = ops::index_select(target, 0, rows);
  return ops::mul_scalar(ops::sum(ops::square(ops::sub(pred, picked))), 1.0 / static_cast<double>(rows.size()));
}

namespace {

Tensor centered(const Tensor& tokens, const char* op) {
  if (tokens.dim() != 2 || tokens.size(0) < 2) {
    throw std::invalid_argument(std::string(op) + ": need [N>=2, D], got " + shape_str(tokens.shape()));
  }
  return ops::sub(tokens, ops::mean_axis(tokens, 0));
}

template <class F>
Tensor per_slot(const Tensor& tokens, const char* op, F f) {
  if (tokens.dim() != 3) throw std::invalid_argument(std::string(op) + ": expected [B,S,D], got " + shape_str(tokens.shape()));
  std::size_t b = tokens.size(0), s = tokens.size(1), d = tokens.size(2);
  Tensor total;
  for (std::size_t i = 0; i < s; ++i) {
    Tensor slot = ops::reshape(ops::slice(tokens, 1, i, i + 1), {b, d});
    Tensor term = f(slot);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::mul_scalar(total, 1.0 / static_cast<double>(s));
}

}  // namespace

Tensor variance_penalty(const Tensor& tokens, double target_std, double eps) {
  Tensor c = centered(tokens, "variance_penalty");
  double inv = 1.0 / static_cast<double>(tokens.size(0) - 1);
  Tensor var = ops::mul_scalar(ops::sum_axis(ops::square(c), 0), inv);
  Tensor std_dev = ops::sqrt(ops::add_scalar(var, eps));
  return ops::mean(ops::relu(ops::add_scalar(ops::neg(std_dev), target_std)));
}

Tensor covariance_penalty(const Tensor& tokens) {
  Tensor c = centered(tokens, "covariance_penalty");
  std::size_t d = tokens.size(1);
  double inv = 1.0 / static_cast<double>(tokens.size(0) - 1);
  Tensor cov = ops::mul_scalar(ops::matmul(ops::transpose(c), c), inv);
  Tensor off = Tensor::full({d, d}, 1.0);
  auto o = off.mutable_data();
  for (std::size_t i = 0; i < d; ++i) o[i * d + i] = 0.0;
  return ops::mul_scalar(ops::sum(ops::square(ops::mul(cov, off))), 1.0 / static_cast<double>(d));
}

Tensor sequence_variance_penalty(const Tensor& tokens, double target_std, double eps) {
  return per_slot(tokens, "sequence_variance_penalty",
                  [&](const Tensor& slot) { return variance_penalty(slot, target_std, eps); });
}

Tensor sequence_covariance_penalty(const Tensor& tokens) {
  return per_slot(tokens, "sequence_covariance_penalty", [](const Tensor& slot) { return covariance_penalty(slot); });
}

Tensor style_jepa_total(const Tensor& mse, const Tensor& var, const Tensor& cov, double lambda_var, double lambda_cov) {
  Tensor total = mse;
  if (lambda_var != 0.0) total = ops::add(total, ops::mul_scalar(var, lambda_var));
  if (lambda_cov != 0.0) total = ops::add(total, ops::mul_scalar(cov, lambda_cov));
  return total;
}

JepaParts jepa_objective(const Tensor& student_tokens, const Tensor& teacher_tokens, const Predictor& predictor,
                         const MaskSet& mask, const JepaOptions& opt) {
  JepaParts parts;
  Tensor pred = predictor.predict(student_tokens, mask);
  parts.mse = jepa_mse(pred, teacher_tokens, mask);
  if (opt.lambda_var != 0.0) parts.var = sequence_variance_penalty(student_tokens, opt.target_std, opt.var_eps);
  if (opt.lambda_cov != 0.0) parts.cov = sequence_covariance_penalty(student_tokens);
  parts.total = parts.mse;
  if (parts.var.defined()) parts.total = ops::add(parts.total, ops::mul_scalar(parts.var, opt.lambda_var));
  if (parts.cov.defined()) parts.total = ops::add(parts.total, ops::mul_scalar(parts.cov, opt.lambda_cov));
  return parts;
}

void update_teacher(const ParamList& teacher, const ParamList& student, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("update_teacher: momentum must lie in [0,1), got " + std::to_string(momentum));
  }
  if (teacher.size() != student.size()) throw std::invalid_argument("update_teacher: parameter count mismatch");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor t = teacher[i].tensor;
    auto tv = t.mutable_data();
    auto sv = student[i].tensor.data();
    if (tv.size() != sv.size()) throw std::invalid_argument("update_teacher: shape mismatch at " + teacher[i].name);
    for (std::size_t j = 0; j < tv.size(); ++j) tv[j] = momentum * tv[j] + (1.0 - momentum) * sv[j];
  }
}

double mean_token_std(const Tensor& tokens) {
  if (tokens.dim() != 3 || tokens.size(0) < 2) {
    throw std::invalid_argument("mean_token_std: expected [B>=2,S,D], got " + shape_str(tokens.shape()));
  }
  const std::size_t b = tokens.size(0), sd = tokens.size(1) * tokens.size(2);
  auto v = tokens.data();
  double total = 0.0;
  for (std::size_t j = 0; j < sd; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < b; ++i) mean += v[i * sd + j];
    mean /= static_cast<double>(b);
    double ss = 0.0;
    for (std::size_t i = 0; i < b; ++i) ss += (v[i * sd + j] - mean) * (v[i * sd + j] - mean);
    total += std::sqrt(ss / static_cast<double>(b - 1));
  }
  return total / static_cast<double>(sd);
}

CollapseToyResult run_collapse_toy(const CollapseToyOptions& opt) {
  Rng rng(opt.seed);
  const std::size_t n = opt.samples, s = opt.seq_len;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> xv(n * s * opt.input_dim);
  for (auto& x : xv) x = normal(rng);
  const Tensor inputs({n * s, opt.input_dim}, std::move(xv));

  Linear student(opt.input_dim, opt.dim, rng);
  Linear teacher(opt.input_dim, opt.dim, rng);
  ParamList sp, tp;
  student.collect(sp, "student");
  teacher.collect(tp, "teacher");
  update_teacher(tp, sp, 0.0);
  Predictor predictor(s, opt.dim, opt.hidden, rng);
  ParamList params = sp;
  for (auto& p : predictor.parameters()) params.push_back(p);
  Adam adam(params, opt.opt);

  JepaOptions jo = opt.jepa;
  if (!opt.penalties) {
    jo.lambda_var = 0.0;
    jo.lambda_cov = 0.0;
  }
  auto encode = [&](const Linear& enc) { return ops::reshape(enc(inputs), {n, s, opt.dim}); };

  CollapseToyResult result;
  {
    NoGradScope ng;
    result.mean_std.push_back(mean_token_std(encode(student)));
  }
  for (std::size_t step = 0; step < opt.steps; ++step) {
    MaskSet mask = sample_mask(s, n, jo.mask_ratio, rng);
    Tensor target;
    {
      NoGradScope ng;
      target = encode(teacher);
    }
    Graph g;
    g.backprop(jepa_objective(encode(student), target, predictor, mask, jo).total);
    adam.step();
    update_teacher(tp, sp, opt.teacher_momentum);
    NoGradScope ng;
    result.mean_std.push_back(mean_token_std(encode(student)));
  }
  return result;
}

}  // namespace stylesplit
