#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acuity/encoding.hpp"
#include "acuity/linalg.hpp"

namespace acuity::model {

using encoding::CveParams;
using encoding::ObservationTriplet;

enum class AttentionVariant { Full, SlidingWindowGlobal };
enum class HeadKind { FourClass, BinaryDelirium };

struct ModelConfig {
    int embed_dim = 32;
    int layers = 2;
    int heads = 4;
    int ffn_hidden = 64;
    int static_embed = 32;
    AttentionVariant attention = AttentionVariant::Full;
    int attn_window = 16;   // half-width of the sliding window
    int attn_global = 1;    // leading positions attending everywhere
    bool order_positions = false;  // sinusoidal order encodings (masked variant)
    HeadKind head = HeadKind::FourClass;
    double dropout = 0.0;
    uint64_t seed = 1;
    int max_seq = 12000;

    // bound when parameters are created
    int vocab_size = 0;
    int static_dim = 0;

    int num_classes() const { return head == HeadKind::FourClass ? 4 : 1; }
    int head_dim() const { return embed_dim / heads; }
    void validate() const;
};

// n×n allow-matrix for self-attention. Full allows everything;
// SlidingWindowGlobal allows (i,j) with |i-j| <= window, plus every pair
// touching one of the first `global_count` positions.
std::vector<uint8_t> build_mask(int n, AttentionVariant variant, int window, int global_count);

struct LayerParams {
    Matrix ln1_gain, ln1_bias;   // 1×d
    Matrix wq, wk, wv, wo;       // d×d
    Matrix bq, bk, bv, bo;       // 1×d
    Matrix ln2_gain, ln2_bias;   // 1×d
    Matrix ffn_w1, ffn_b1;       // ffn×d, 1×ffn
    Matrix ffn_w2, ffn_b2;       // d×ffn, 1×d
};

struct ModelParams {
    CveParams cve_t, cve_v;
    Matrix feature_table;             // V×d
    Matrix empty_token;               // 1×d, stands in for an empty window
    std::vector<LayerParams> layers;
    Matrix final_ln_gain, final_ln_bias;  // 1×d
    Matrix fusion_w;                  // d×d
    Matrix fusion_a;                  // 1×d
    Matrix static_w1, static_b1;      // E_S×S, 1×E_S
    Matrix static_w2, static_b2;      // E_S×E_S, 1×E_S
    Matrix cls_w, cls_b;              // C×(d+E_S), 1×C

    void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;
    ModelParams zeros_like() const;
    bool finite() const;
    size_t parameter_count() const;
};

ModelParams init_params(const ModelConfig& config);

struct PredictionOutput {
    std::vector<double> probabilities;  // 4 classes, or 1 delirium probability
    int predicted_class = 0;            // argmax; ties toward the lowest index
};

// Per-layer activation record kept for backprop.
struct LayerCache {
    Matrix x_in;                 // block input
    std::vector<double> ln1_mean, ln1_istd;
    Matrix u1;                   // after LN1
    Matrix q, k, v;
    std::vector<Matrix> attn;    // per head, n×n; disallowed entries stay 0
    Matrix concat;               // attention output before the O projection
    Matrix proj;                 // O projection output (pre-dropout)
    Matrix drop1;                // dropout mask (empty when inactive)
    Matrix x_mid;                // after attention residual
    std::vector<double> ln2_mean, ln2_istd;
    Matrix u2;
    Matrix ffn_pre;              // n×ffn, before GELU
    Matrix ffn_act;              // n×ffn
    Matrix ffn_out;              // n×d (pre-dropout)
    Matrix drop2;
};

struct ForwardCache {
    std::vector<ObservationTriplet> window;  // as embedded (after empty-token swap)
    bool used_empty_token = false;
    Matrix hidden_t, hidden_v;   // CVE tanh activations, n×h
    Matrix embed;                // n×d after optional order positions
    std::vector<LayerCache> layers;
    Matrix x_final;              // output of the last block
    std::vector<double> final_mean, final_istd;
    Matrix ctx;                  // final layer norm output
    Matrix fusion_z;             // n×d tanh(W_f · ce)
    std::vector<double> fusion_alpha;
    std::vector<double> temporal;     // E_T
    std::vector<double> static_in;    // copy of the static vector
    std::vector<double> static_pre, static_act, static_out;  // E_S branch
    std::vector<double> logits, probs;
};

// Full forward pass for one shift. `positions` is required when
// config.order_positions is set. `dropout_rng` enables training-time dropout.
PredictionOutput forward(std::span<const ObservationTriplet> window,
                         std::span<const double> statics, const ModelParams& params,
                         const ModelConfig& config, ForwardCache* cache = nullptr,
                         const Matrix* positions = nullptr, Rng* dropout_rng = nullptr);

// Weighted cross-entropy, mean over the batch. `class_weights` has one entry
// per class (two for the binary head: negative, positive).
double loss(std::span<const PredictionOutput> predictions, std::span<const int> labels,
            std::span<const double> class_weights, HeadKind head);

// Exact analytic gradients of the batch-mean weighted loss for one sample,
// accumulated into `grads`.
void backward(const ForwardCache& cache, const ModelParams& params, const ModelConfig& config,
              int label, double class_weight, double inv_batch, ModelParams& grads);

struct Sample {
    const std::vector<ObservationTriplet>* window = nullptr;
    const std::vector<double>* statics = nullptr;
    int label = 0;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 64;
    int max_epochs = 30;
    int patience = 5;              // epochs without validation improvement
    int max_batches_per_epoch = 0; // 0 = full pass
    double grad_clip = 10.0;       // global-norm clip; <= 0 disables
    double class_weight_cap = 10.0;
    int threads = 1;
    uint64_t seed = 1;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0;  // mean one-vs-rest AUROC (or binary AUROC)
};

struct TrainResult {
    ModelParams params;   // best-validation checkpoint
    std::vector<EpochStats> log;
    double best_val_metric = 0.0;
    int best_epoch = -1;
};

std::vector<double> class_weights_from_labels(std::span<const int> labels, int n_classes,
                                              double cap);

// Mini-batch Adam with early stopping on the validation metric. Deterministic
// for a given seed at any thread count. Throws DataError on divergence.
TrainResult train(std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const ModelConfig& config, const TrainConfig& tc);

std::vector<PredictionOutput> predict_batch(std::span<const Sample> samples,
                                            const ModelParams& params,
                                            const ModelConfig& config, int threads);

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    uint64_t seed = 0;
    std::string vocab_hash;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Refuses to load when `expected_vocab_hash` is set and does not match.
Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<std::string>& expected_vocab_hash);

}  // namespace acuity::model
