#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "revlab/objectives.hpp"
#include "revlab/tensor.hpp"

namespace revlab {

// Pre-norm transformer: learned absolute positions, GELU MLP, optional weight
// tying between the token embedding and the output head.
struct ModelConfig {
  int32_t n_layers = 4;
  int32_t d_model = 256;
  int32_t n_heads = 4;
  int32_t d_mlp = 1024;
  int32_t vocab_size = 0;
  int32_t max_seq_len = 32;
  AttentionMode attention = AttentionMode::Causal;
  bool tie_embeddings = false;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ParamInfo {
  std::string name;
  size_t offset = 0;
  int32_t rows = 0, cols = 0;
  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

// All parameters live in one flat buffer; layout order is fixed and doubles as
// the checkpoint tensor order. Training uses float; gradient checks
// instantiate the same code with double.
template <typename T>
struct ParamStore {
  ModelConfig config;
  std::vector<ParamInfo> layout;
  std::vector<T> flat;

  T* tensor(const std::string& name);
  const T* tensor(const std::string& name) const;
  const ParamInfo& info(const std::string& name) const;
};

using Params = ParamStore<float>;

// deterministic init: gaussian std 0.02 everywhere except the residual output
// projections (attn wo, mlp w_down) which are scaled down by 1/sqrt(2*n_layers);
// biases zero, layernorm gains one. Rejects inconsistent configs.
template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, uint64_t seed);

// post-GELU MLP hidden states captured during forward: acts[layer] has one
// d_mlp row per requested position
template <typename T>
struct ForwardTrace {
  std::vector<int32_t> positions;
  std::vector<Mat<T>> acts;
};

// single-sequence inference; trace_positions may be empty. Throws on token ids
// outside the vocab or sequences longer than max_seq_len.
template <typename T>
Mat<T> forward(const ParamStore<T>& ps, std::span<const TokenId> tokens, AttentionMode mode,
               ForwardTrace<T>* trace = nullptr, std::span<const int32_t> trace_positions = {});

// mean token-level cross-entropy over positions with loss_mask set;
// std::nullopt when no position carries loss
template <typename T>
std::optional<double> loss_from_logits(const Mat<T>& logits, std::span<const TokenId> targets,
                                       std::span<const uint8_t> loss_mask);

// forward + backward over a batch (examples must share one attention mode);
// grads is resized to the flat parameter size. Returns the batch loss or
// nullopt when no example carries loss (grads are then zero).
template <typename T>
std::optional<double> grad_batch(const ParamStore<T>& ps, std::span<const TrainingExample> batch,
                                 std::vector<T>& grads);

struct AdamState {
  std::vector<float> m, v;
  int64_t t = 0;
  float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
};

AdamState make_adam_state(const Params& ps);

// one Adam update on the mean batch loss; no update when the batch carries no
// loss. lr is the already-scheduled rate for this step.
std::optional<double> grad_step(Params& ps, std::span<const TrainingExample> batch, AdamState& opt,
                                float lr);

// greedy continuation: token with the largest logit at the last position
template <typename T>
TokenId argmax_next(const ParamStore<T>& ps, std::span<const TokenId> prompt, AttentionMode mode);

// argmax over the vocabulary at one position (MLM-style queries)
template <typename T>
TokenId argmax_at(const ParamStore<T>& ps, std::span<const TokenId> tokens, AttentionMode mode,
                  int32_t position);

}  // namespace revlab
