#pragma once

#include <vector>

#include "stylesplit/nn.hpp"

namespace stylesplit {

// Hidden (b, s) positions of a [B,S,D] token sequence, per sample sorted.
struct MaskSet {
  std::size_t seq_len = 0;
  std::vector<std::vector<std::size_t>> positions;

  std::size_t batch() const { return positions.size(); }
  std::size_t count() const;
  // Flat row indices b*S + s in (b, then s) order.
  std::vector<std::size_t> flat_rows() const;
};

// Masks max(1, round(ratio * seq_len)) distinct positions per sample.
// Rejects ratio outside (0,1) and masks that would hide the whole sequence.
MaskSet sample_mask(std::size_t seq_len, std::size_t batch, double ratio, Rng& rng);

// Masked-token predictor: mask embedding substitution, learned slot
// embeddings, one residual token-mixing layer, one residual channel MLP,
// and a linear readout.
class Predictor {
 public:
  Predictor() = default;
  Predictor(std::size_t seq_len, std::size_t dim, std::size_t hidden, Rng& rng);

  // tokens [B,S,D] -> predictions [|M|, D] in MaskSet::flat_rows order.
  Tensor predict(const Tensor& tokens, const MaskSet& mask) const;
  ParamList parameters() const;
  Linear& readout() { return out_; }
  std::size_t seq_len() const { return seq_len_; }

 private:
  std::size_t seq_len_ = 0, dim_ = 0;
  Tensor mask_token_;  // [D]
  Tensor slot_embed_;  // [S,D]
  Tensor mix_;         // [S,S]
  Linear fc1_, fc2_, out_;
};

Tensor predict_masked(const Tensor& student_tokens, const MaskSet& mask, const Predictor& predictor);

// (1/|M|) sum ||pred - sg(target)||^2 over masked positions.
Tensor jepa_mse(const Tensor& pred, const Tensor& target_tokens, const MaskSet& mask);

// tokens [N,D]: mean_d max(0, target_std - sqrt(Var_n + eps)), unbiased Var.
Tensor variance_penalty(const Tensor& tokens, double target_std = 1.0, double eps = 1e-4);
// tokens [N,D]: (1/D) sum_{i != j} Cov_ij^2 after centering, unbiased.
Tensor covariance_penalty(const Tensor& tokens);
// Sequence variants [B,S,D]: penalties over the batch per slot, averaged.
Tensor sequence_variance_penalty(const Tensor& tokens, double target_std = 1.0, double eps = 1e-4);
Tensor sequence_covariance_penalty(const Tensor& tokens);

Tensor style_jepa_total(const Tensor& mse, const Tensor& var, const Tensor& cov, double lambda_var, double lambda_cov);

struct JepaOptions {
  double mask_ratio = 1.0 / 3.0;
  double lambda_var = 25.0;
  double lambda_cov = 1.0;
  double target_std = 1.0;
  double var_eps = 1e-4;
};

struct JepaParts {
  Tensor mse, var, cov, total;
};

// One masked-prediction objective over a student sequence and a teacher
// target sequence (detached here).
JepaParts jepa_objective(const Tensor& student_tokens, const Tensor& teacher_tokens, const Predictor& predictor,
                         const MaskSet& mask, const JepaOptions& opt);

// theta_t <- m * theta_t + (1 - m) * theta_s, m in [0,1).
void update_teacher(const ParamList& teacher, const ParamList& student, double momentum);

// Mean over slots and dimensions of the across-batch unbiased std of a
// [B,S,D] token sequence.
double mean_token_std(const Tensor& tokens);

// Synthetic masked-token task for probing variance collapse: fixed random
// inputs with independent slots (so masked slots are unpredictable), a
// linear student encoder, an EMA teacher, and an AdamW optimizer whose
// weight decay pulls the encoder toward zero. The masked-prediction loss
// alone does not resist that pull; the variance term does.
struct CollapseToyOptions {
  std::size_t samples = 64;
  std::size_t seq_len = 6;
  std::size_t input_dim = 16;
  std::size_t dim = 16;
  std::size_t hidden = 32;
  std::size_t steps = 500;
  bool penalties = true;
  JepaOptions jepa{};
  AdamOptions opt{1e-2, 0.9, 0.999, 1e-8, 1.0};
  double teacher_momentum = 0.99;
  std::uint64_t seed = 0;
};

struct CollapseToyResult {
  std::vector<double> mean_std;  // entry 0 before training, then after each step
};

CollapseToyResult run_collapse_toy(const CollapseToyOptions& opt);

}  // namespace stylesplit
