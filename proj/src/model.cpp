#include "acuity/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "acuity/metrics.hpp"
#include "json.hpp"

namespace acuity::model {

namespace {

constexpr double kLnEps = 1e-5;
constexpr int kGradChunks = 8;  // fixed so reductions are thread-count invariant

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

inline double gelu_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794;
    return cdf + x * pdf;
}

struct MaskSpec {
    AttentionVariant variant;
    int window;
    int global_count;
    bool allowed(int i, int j) const {
        if (variant == AttentionVariant::Full) return true;
        return std::abs(i - j) <= window || i < global_count || j < global_count;
    }
};

void layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& out,
                     std::vector<double>& means, std::vector<double>& istds) {
    int n = x.rows, d = x.cols;
    means.assign(size_t(n), 0.0);
    istds.assign(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* xr = x.row(i);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double c = xr[j] - mean;
            var += c * c;
        }
        var /= d;
        double istd = 1.0 / std::sqrt(var + kLnEps);
        means[i] = mean;
        istds[i] = istd;
        double* orow = out.row(i);
        const double* g = gain.row(0);
        const double* b = bias.row(0);
        for (int j = 0; j < d; ++j) orow[j] = g[j] * (xr[j] - mean) * istd + b[j];
    }
}

// dx_out accumulates; dgain/dbias accumulate
void layer_norm_backward_rows(const Matrix& x, const Matrix& gain, const std::vector<double>& means,
                              const std::vector<double>& istds, const Matrix& dy, Matrix& dx_out,
                              Matrix& dgain, Matrix& dbias) {
    int n = x.rows, d = x.cols;
    const double* g = gain.row(0);
    for (int i = 0; i < n; ++i) {
        const double* xr = x.row(i);
        const double* dyr = dy.row(i);
        double* dxr = dx_out.row(i);
        double mean = means[i], istd = istds[i];
        double mean_dxh = 0.0, mean_dxh_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
            double xhat = (xr[j] - mean) * istd;
            double dxh = dyr[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xhat += dxh * xhat;
            dgain(0, j) += dyr[j] * xhat;
            dbias(0, j) += dyr[j];
        }
        mean_dxh /= d;
        mean_dxh_xhat /= d;
        for (int j = 0; j < d; ++j) {
            double xhat = (xr[j] - mean) * istd;
            dxr[j] += istd * (dyr[j] * g[j] - mean_dxh - xhat * mean_dxh_xhat);
        }
    }
}

void check_finite(const Matrix& x, int layer_index) {
    if (!x.finite())
        throw DataError("non-finite activation in transformer layer " +
                        std::to_string(layer_index));
}

Matrix make_dropout_mask(int n, int d, double rate, Rng& rng) {
    Matrix mask(n, d);
    double scale = 1.0 / (1.0 - rate);
    for (double& v : mask.a) v = rng.uniform() < rate ? 0.0 : scale;
    return mask;
}

void apply_mask(const Matrix& mask, Matrix& x) {
    if (mask.size() == 0) return;
    for (size_t i = 0; i < x.a.size(); ++i) x.a[i] *= mask.a[i];
}

void init_uniform(Matrix& m, int fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(double(std::max(fan_in, 1)));
    for (double& v : m.a) v = rng.uniform(-bound, bound);
}

}  // namespace

void ModelConfig::validate() const {
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (heads < 1 || embed_dim % heads != 0)
        throw ConfigError("embed_dim must be divisible by heads");
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (ffn_hidden < 1) throw ConfigError("ffn_hidden must be >= 1");
    if (static_embed < 1) throw ConfigError("static_embed must be >= 1");
    if (attention == AttentionVariant::SlidingWindowGlobal && attn_window < 1)
        throw ConfigError("attn_window must be >= 1 for the sliding attention variant");
    if (attn_global < 0) throw ConfigError("attn_global must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
    if (static_dim < 0) throw ConfigError("static_dim must be >= 0");
    if (max_seq < 1) throw ConfigError("max_seq must be >= 1");
}

std::vector<uint8_t> build_mask(int n, AttentionVariant variant, int window, int global_count) {
    if (n < 0) throw ConfigError("mask size must be >= 0");
    MaskSpec spec{variant, window, global_count};
    std::vector<uint8_t> mask(size_t(n) * size_t(n), 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) mask[size_t(i) * n + j] = spec.allowed(i, j) ? 1 : 0;
    return mask;
}

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("cve_t.w1", cve_t.w1);
    fn("cve_t.b1", cve_t.b1);
    fn("cve_t.w2", cve_t.w2);
    fn("cve_t.b2", cve_t.b2);
    fn("cve_v.w1", cve_v.w1);
    fn("cve_v.b1", cve_v.b1);
    fn("cve_v.w2", cve_v.w2);
    fn("cve_v.b2", cve_v.b2);
    fn("feature_table", feature_table);
    fn("empty_token", empty_token);
    for (size_t l = 0; l < layers.size(); ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        LayerParams& lp = layers[l];
        fn(p + "ln1_gain", lp.ln1_gain);
        fn(p + "ln1_bias", lp.ln1_bias);
        fn(p + "wq", lp.wq);
        fn(p + "wk", lp.wk);
        fn(p + "wv", lp.wv);
        fn(p + "wo", lp.wo);
        fn(p + "bq", lp.bq);
        fn(p + "bk", lp.bk);
        fn(p + "bv", lp.bv);
        fn(p + "bo", lp.bo);
        fn(p + "ln2_gain", lp.ln2_gain);
        fn(p + "ln2_bias", lp.ln2_bias);
        fn(p + "ffn_w1", lp.ffn_w1);
        fn(p + "ffn_b1", lp.ffn_b1);
        fn(p + "ffn_w2", lp.ffn_w2);
        fn(p + "ffn_b2", lp.ffn_b2);
    }
    fn("final_ln_gain", final_ln_gain);
    fn("final_ln_bias", final_ln_bias);
    fn("fusion_w", fusion_w);
    fn("fusion_a", fusion_a);
    fn("static_w1", static_w1);
    fn("static_b1", static_b1);
    fn("static_w2", static_w2);
    fn("static_b2", static_b2);
    fn("cls_w", cls_w);
    fn("cls_b", cls_b);
}

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, Matrix& m) { fn(name, m); });
}

ModelParams ModelParams::zeros_like() const {
    ModelParams z = *this;
    z.for_each_tensor([](const std::string&, Matrix& m) { m.zero(); });
    return z;
}

bool ModelParams::finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const Matrix& m) { ok = ok && m.finite(); });
    return ok;
}

size_t ModelParams::parameter_count() const {
    size_t n = 0;
    for_each_tensor([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, {0x1917}));
    int d = config.embed_dim;
    ModelParams p;
    p.cve_t = encoding::make_cve(d, rng);
    p.cve_v = encoding::make_cve(d, rng);
    p.feature_table = Matrix(config.vocab_size, d);
    init_uniform(p.feature_table, d, rng);
    p.empty_token = Matrix(1, d);
    init_uniform(p.empty_token, d, rng);
    p.layers.resize(size_t(config.layers));
    for (auto& lp : p.layers) {
        lp.ln1_gain = Matrix(1, d, 1.0);
        lp.ln1_bias = Matrix(1, d);
        lp.wq = Matrix(d, d);
        lp.wk = Matrix(d, d);
        lp.wv = Matrix(d, d);
        lp.wo = Matrix(d, d);
        init_uniform(lp.wq, d, rng);
        init_uniform(lp.wk, d, rng);
        init_uniform(lp.wv, d, rng);
        init_uniform(lp.wo, d, rng);
        lp.bq = Matrix(1, d);
        lp.bk = Matrix(1, d);
        lp.bv = Matrix(1, d);
        lp.bo = Matrix(1, d);
        lp.ln2_gain = Matrix(1, d, 1.0);
        lp.ln2_bias = Matrix(1, d);
        lp.ffn_w1 = Matrix(config.ffn_hidden, d);
        lp.ffn_b1 = Matrix(1, config.ffn_hidden);
        lp.ffn_w2 = Matrix(d, config.ffn_hidden);
        lp.ffn_b2 = Matrix(1, d);
        init_uniform(lp.ffn_w1, d, rng);
        init_uniform(lp.ffn_w2, config.ffn_hidden, rng);
    }
    p.final_ln_gain = Matrix(1, d, 1.0);
    p.final_ln_bias = Matrix(1, d);
    p.fusion_w = Matrix(d, d);
    p.fusion_a = Matrix(1, d);
    init_uniform(p.fusion_w, d, rng);
    init_uniform(p.fusion_a, d, rng);
    int es = config.static_embed;
    p.static_w1 = Matrix(es, config.static_dim);
    p.static_b1 = Matrix(1, es);
    p.static_w2 = Matrix(es, es);
    p.static_b2 = Matrix(1, es);
    init_uniform(p.static_w1, std::max(config.static_dim, 1), rng);
    init_uniform(p.static_w2, es, rng);
    int c = config.num_classes();
    p.cls_w = Matrix(c, d + es);
    p.cls_b = Matrix(1, c);
    init_uniform(p.cls_w, d + es, rng);
    return p;
}

PredictionOutput forward(std::span<const ObservationTriplet> window,
                         std::span<const double> statics, const ModelParams& params,
                         const ModelConfig& config, ForwardCache* cache, const Matrix* positions,
                         Rng* dropout_rng) {
    int d = config.embed_dim;
    if (int(statics.size()) != config.static_dim)
        throw DataError("static vector has " + std::to_string(statics.size()) +
                        " entries, model expects " + std::to_string(config.static_dim));

    ForwardCache local;
    ForwardCache& cc = cache ? *cache : local;
    cc.used_empty_token = window.empty();
    cc.window.assign(window.begin(), window.end());

    // fused triplet embeddings, or the learned stand-in for an empty window
    if (cc.used_empty_token) {
        cc.embed = Matrix(1, d);
        std::memcpy(cc.embed.row(0), params.empty_token.row(0), size_t(d) * sizeof(double));
        cc.hidden_t = Matrix(0, 0);
        cc.hidden_v = Matrix(0, 0);
    } else {
        cc.embed = encoding::embed_window(window, params.cve_t, params.cve_v,
                                          params.feature_table, &cc.hidden_t, &cc.hidden_v);
    }
    int n = cc.embed.rows;

    if (config.order_positions) {
        if (!positions) throw DataError("order positions requested but no position table given");
        encoding::add_order_positions(cc.embed, *positions);
    }

    MaskSpec mask{config.attention, config.attn_window, config.attn_global};
    int heads = config.heads;
    int dh = config.head_dim();
    double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    bool use_dropout = config.dropout > 0.0 && dropout_rng != nullptr;

    Matrix x = cc.embed;
    cc.layers.assign(size_t(config.layers), LayerCache{});
    std::vector<double> score_row(size_t(n), 0.0);

    for (int l = 0; l < config.layers; ++l) {
        const LayerParams& lp = params.layers[size_t(l)];
        LayerCache& lc = cc.layers[size_t(l)];
        lc.x_in = x;

        lc.u1 = Matrix(n, d);
        layer_norm_rows(lc.x_in, lp.ln1_gain, lp.ln1_bias, lc.u1, lc.ln1_mean, lc.ln1_istd);

        lc.q = Matrix(n, d);
        lc.k = Matrix(n, d);
        lc.v = Matrix(n, d);
        for (int i = 0; i < n; ++i) {
            matvec(lp.wq, lc.u1.row(i), lc.q.row(i));
            matvec(lp.wk, lc.u1.row(i), lc.k.row(i));
            matvec(lp.wv, lc.u1.row(i), lc.v.row(i));
            axpy(1.0, lp.bq.row(0), lc.q.row(i), d);
            axpy(1.0, lp.bk.row(0), lc.k.row(i), d);
            axpy(1.0, lp.bv.row(0), lc.v.row(i), d);
        }

        lc.attn.assign(size_t(heads), Matrix(n, n));
        lc.concat = Matrix(n, d);
        for (int h = 0; h < heads; ++h) {
            int off = h * dh;
            Matrix& attn = lc.attn[size_t(h)];
            for (int i = 0; i < n; ++i) {
                const double* qi = lc.q.row(i) + off;
                double mx = -1e300;
                for (int j = 0; j < n; ++j) {
                    if (!mask.allowed(i, j)) continue;
                    double s = dot(qi, lc.k.row(j) + off, dh) * inv_sqrt_dh;
                    score_row[size_t(j)] = s;
                    if (s > mx) mx = s;
                }
                double sum = 0.0;
                for (int j = 0; j < n; ++j) {
                    if (!mask.allowed(i, j)) continue;
                    double e = std::exp(score_row[size_t(j)] - mx);
                    attn(i, j) = e;
                    sum += e;
                }
                double* out = lc.concat.row(i) + off;
                for (int j = 0; j < n; ++j) {
                    if (!mask.allowed(i, j)) continue;
                    double a = attn(i, j) / sum;
                    attn(i, j) = a;
                    axpy(a, lc.v.row(j) + off, out, dh);
                }
            }
        }

        lc.proj = Matrix(n, d);
        for (int i = 0; i < n; ++i) {
            matvec(lp.wo, lc.concat.row(i), lc.proj.row(i));
            axpy(1.0, lp.bo.row(0), lc.proj.row(i), d);
        }
        Matrix attn_out = lc.proj;
        if (use_dropout) {
            lc.drop1 = make_dropout_mask(n, d, config.dropout, *dropout_rng);
            apply_mask(lc.drop1, attn_out);
        }
        lc.x_mid = lc.x_in;
        for (size_t i = 0; i < lc.x_mid.a.size(); ++i) lc.x_mid.a[i] += attn_out.a[i];

        lc.u2 = Matrix(n, d);
        layer_norm_rows(lc.x_mid, lp.ln2_gain, lp.ln2_bias, lc.u2, lc.ln2_mean, lc.ln2_istd);

        int f = config.ffn_hidden;
        lc.ffn_pre = Matrix(n, f);
        lc.ffn_act = Matrix(n, f);
        lc.ffn_out = Matrix(n, d);
        for (int i = 0; i < n; ++i) {
            matvec(lp.ffn_w1, lc.u2.row(i), lc.ffn_pre.row(i));
            axpy(1.0, lp.ffn_b1.row(0), lc.ffn_pre.row(i), f);
            double* act = lc.ffn_act.row(i);
            const double* pre = lc.ffn_pre.row(i);
            for (int j = 0; j < f; ++j) act[j] = gelu(pre[j]);
            matvec(lp.ffn_w2, act, lc.ffn_out.row(i));
            axpy(1.0, lp.ffn_b2.row(0), lc.ffn_out.row(i), d);
        }
        Matrix ffn_out = lc.ffn_out;
        if (use_dropout) {
            lc.drop2 = make_dropout_mask(n, d, config.dropout, *dropout_rng);
            apply_mask(lc.drop2, ffn_out);
        }
        x = lc.x_mid;
        for (size_t i = 0; i < x.a.size(); ++i) x.a[i] += ffn_out.a[i];
        check_finite(x, l);
    }

    cc.x_final = x;
    cc.ctx = Matrix(n, d);
    layer_norm_rows(cc.x_final, params.final_ln_gain, params.final_ln_bias, cc.ctx,
                    cc.final_mean, cc.final_istd);

    // fusion attention over contextual embeddings
    cc.fusion_z = Matrix(n, d);
    std::vector<double> u(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double* z = cc.fusion_z.row(i);
        matvec(params.fusion_w, cc.ctx.row(i), z);
        for (int j = 0; j < d; ++j) z[j] = std::tanh(z[j]);
        u[size_t(i)] = dot(params.fusion_a.row(0), z, d);
    }
    double umax = *std::max_element(u.begin(), u.end());
    double usum = 0.0;
    cc.fusion_alpha.assign(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double e = std::exp(u[size_t(i)] - umax);
        cc.fusion_alpha[size_t(i)] = e;
        usum += e;
    }
    cc.temporal.assign(size_t(d), 0.0);
    for (int i = 0; i < n; ++i) {
        double a = cc.fusion_alpha[size_t(i)] / usum;
        cc.fusion_alpha[size_t(i)] = a;
        axpy(a, cc.ctx.row(i), cc.temporal.data(), d);
    }

    // static branch
    int es = config.static_embed;
    cc.static_in.assign(statics.begin(), statics.end());
    cc.static_pre.assign(size_t(es), 0.0);
    cc.static_act.assign(size_t(es), 0.0);
    cc.static_out.assign(size_t(es), 0.0);
    matvec(params.static_w1, cc.static_in.data(), cc.static_pre.data());
    axpy(1.0, params.static_b1.row(0), cc.static_pre.data(), es);
    for (int j = 0; j < es; ++j) cc.static_act[size_t(j)] = gelu(cc.static_pre[size_t(j)]);
    matvec(params.static_w2, cc.static_act.data(), cc.static_out.data());
    axpy(1.0, params.static_b2.row(0), cc.static_out.data(), es);

    // classifier over [E_T ; E_S]
    int c = config.num_classes();
    std::vector<double> combined(size_t(d + es), 0.0);
    std::memcpy(combined.data(), cc.temporal.data(), size_t(d) * sizeof(double));
    std::memcpy(combined.data() + d, cc.static_out.data(), size_t(es) * sizeof(double));
    cc.logits.assign(size_t(c), 0.0);
    matvec(params.cls_w, combined.data(), cc.logits.data());
    axpy(1.0, params.cls_b.row(0), cc.logits.data(), c);

    PredictionOutput out;
    if (config.head == HeadKind::FourClass) {
        double mx = *std::max_element(cc.logits.begin(), cc.logits.end());
        double sum = 0.0;
        cc.probs.assign(size_t(c), 0.0);
        for (int j = 0; j < c; ++j) {
            double e = std::exp(cc.logits[size_t(j)] - mx);
            cc.probs[size_t(j)] = e;
            sum += e;
        }
        for (int j = 0; j < c; ++j) cc.probs[size_t(j)] /= sum;
        out.probabilities = cc.probs;
        out.predicted_class =
            int(std::max_element(out.probabilities.begin(), out.probabilities.end()) -
                out.probabilities.begin());
        // max_element already prefers the lowest index on ties
    } else {
        double p = 1.0 / (1.0 + std::exp(-cc.logits[0]));
        cc.probs.assign(1, p);
        out.probabilities = cc.probs;
        out.predicted_class = p >= 0.5 ? 1 : 0;
    }
    for (double p : out.probabilities)
        if (!std::isfinite(p)) throw DataError("non-finite probability in classifier head");
    return out;
}

double loss(std::span<const PredictionOutput> predictions, std::span<const int> labels,
            std::span<const double> class_weights, HeadKind head) {
    if (predictions.size() != labels.size())
        throw DataError("loss: predictions and labels differ in length");
    if (predictions.empty()) return 0.0;
    double total = 0.0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        int y = labels[i];
        if (head == HeadKind::FourClass) {
            if (y < 0 || y >= int(predictions[i].probabilities.size()))
                throw DataError("loss: label out of class range");
            total += class_weights[size_t(y)] * -std::log(predictions[i].probabilities[size_t(y)]);
        } else {
            if (y < 0 || y > 1) throw DataError("loss: binary label must be 0 or 1");
            double p = predictions[i].probabilities[0];
            double nll = y ? -std::log(p) : -std::log(1.0 - p);
            total += class_weights[size_t(y)] * nll;
        }
    }
    return total / double(predictions.size());
}

void backward(const ForwardCache& cc, const ModelParams& params, const ModelConfig& config,
              int label, double class_weight, double inv_batch, ModelParams& grads) {
    int d = config.embed_dim;
    int es = config.static_embed;
    int c = config.num_classes();
    int n = cc.ctx.rows;
    double scale = class_weight * inv_batch;

    std::vector<double> dlogits(size_t(c), 0.0);
    if (config.head == HeadKind::FourClass) {
        for (int j = 0; j < c; ++j)
            dlogits[size_t(j)] = scale * (cc.probs[size_t(j)] - (j == label ? 1.0 : 0.0));
    } else {
        dlogits[0] = scale * (cc.probs[0] - double(label));
    }

    // classifier
    std::vector<double> combined(size_t(d + es), 0.0);
    std::memcpy(combined.data(), cc.temporal.data(), size_t(d) * sizeof(double));
    std::memcpy(combined.data() + d, cc.static_out.data(), size_t(es) * sizeof(double));
    add_outer(grads.cls_w, dlogits.data(), combined.data());
    axpy(1.0, dlogits.data(), grads.cls_b.row(0), c);
    std::vector<double> dcombined(size_t(d + es), 0.0);
    matvec_t_add(params.cls_w, dlogits.data(), dcombined.data());
    const double* dtemporal = dcombined.data();
    const double* dstatic_out = dcombined.data() + d;

    // static branch
    add_outer(grads.static_w2, dstatic_out, cc.static_act.data());
    axpy(1.0, dstatic_out, grads.static_b2.row(0), es);
    std::vector<double> dact(size_t(es), 0.0);
    matvec_t_add(params.static_w2, dstatic_out, dact.data());
    std::vector<double> dpre(size_t(es), 0.0);
    for (int j = 0; j < es; ++j)
        dpre[size_t(j)] = dact[size_t(j)] * gelu_grad(cc.static_pre[size_t(j)]);
    add_outer(grads.static_w1, dpre.data(), cc.static_in.data());
    axpy(1.0, dpre.data(), grads.static_b1.row(0), es);

    // fusion attention
    Matrix dctx(n, d);
    std::vector<double> dalpha(size_t(n), 0.0);
    double sum_ad = 0.0;
    for (int i = 0; i < n; ++i) {
        dalpha[size_t(i)] = dot(dtemporal, cc.ctx.row(i), d);
        axpy(cc.fusion_alpha[size_t(i)], dtemporal, dctx.row(i), d);
        sum_ad += cc.fusion_alpha[size_t(i)] * dalpha[size_t(i)];
    }
    std::vector<double> dzpre(size_t(d), 0.0);
    for (int i = 0; i < n; ++i) {
        double du = cc.fusion_alpha[size_t(i)] * (dalpha[size_t(i)] - sum_ad);
        const double* z = cc.fusion_z.row(i);
        axpy(du, z, grads.fusion_a.row(0), d);
        for (int j = 0; j < d; ++j)
            dzpre[size_t(j)] = du * params.fusion_a(0, j) * (1.0 - z[j] * z[j]);
        add_outer(grads.fusion_w, dzpre.data(), cc.ctx.row(i));
        matvec_t_add(params.fusion_w, dzpre.data(), dctx.row(i));
    }

    // final layer norm
    Matrix dx(n, d);
    layer_norm_backward_rows(cc.x_final, params.final_ln_gain, cc.final_mean, cc.final_istd,
                             dctx, dx, grads.final_ln_gain, grads.final_ln_bias);

    MaskSpec mask{config.attention, config.attn_window, config.attn_global};
    int heads = config.heads;
    int dh = config.head_dim();
    double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    int f = config.ffn_hidden;

    for (int l = config.layers - 1; l >= 0; --l) {
        const LayerParams& lp = params.layers[size_t(l)];
        LayerParams& lg = grads.layers[size_t(l)];
        const LayerCache& lc = cc.layers[size_t(l)];

        // FFN sublayer: x = x_mid + drop2 . ffn_out
        Matrix dffn_out = dx;
        apply_mask(lc.drop2, dffn_out);
        Matrix du2(n, d);
        std::vector<double> dpre_row(size_t(f), 0.0);
        for (int i = 0; i < n; ++i) {
            const double* dor = dffn_out.row(i);
            add_outer(lg.ffn_w2, dor, lc.ffn_act.row(i));
            axpy(1.0, dor, lg.ffn_b2.row(0), d);
            std::fill(dpre_row.begin(), dpre_row.end(), 0.0);
            matvec_t_add(lp.ffn_w2, dor, dpre_row.data());
            const double* pre = lc.ffn_pre.row(i);
            for (int j = 0; j < f; ++j) dpre_row[size_t(j)] *= gelu_grad(pre[j]);
            add_outer(lg.ffn_w1, dpre_row.data(), lc.u2.row(i));
            axpy(1.0, dpre_row.data(), lg.ffn_b1.row(0), f);
            matvec_t_add(lp.ffn_w1, dpre_row.data(), du2.row(i));
        }
        Matrix dx_mid = dx;  // residual path
        layer_norm_backward_rows(lc.x_mid, lp.ln2_gain, lc.ln2_mean, lc.ln2_istd, du2, dx_mid,
                                 lg.ln2_gain, lg.ln2_bias);

        // attention sublayer: x_mid = x_in + drop1 . proj
        Matrix dproj = dx_mid;
        apply_mask(lc.drop1, dproj);
        Matrix dconcat(n, d);
        for (int i = 0; i < n; ++i) {
            const double* dpr = dproj.row(i);
            add_outer(lg.wo, dpr, lc.concat.row(i));
            axpy(1.0, dpr, lg.bo.row(0), d);
            matvec_t_add(lp.wo, dpr, dconcat.row(i));
        }

        Matrix dq(n, d), dk(n, d), dv(n, d);
        std::vector<double> drow(size_t(n), 0.0);
        for (int h = 0; h < heads; ++h) {
            int off = h * dh;
            const Matrix& attn = lc.attn[size_t(h)];
            for (int i = 0; i < n; ++i) {
                const double* dout = dconcat.row(i) + off;
                double rowsum = 0.0;
                for (int j = 0; j < n; ++j) {
                    if (!mask.allowed(i, j)) continue;
                    double da = dot(dout, lc.v.row(j) + off, dh);
                    drow[size_t(j)] = da;
                    rowsum += attn(i, j) * da;
                    axpy(attn(i, j), dout, dv.row(j) + off, dh);
                }
                for (int j = 0; j < n; ++j) {
                    if (!mask.allowed(i, j)) continue;
                    double ds = attn(i, j) * (drow[size_t(j)] - rowsum) * inv_sqrt_dh;
                    axpy(ds, lc.k.row(j) + off, dq.row(i) + off, dh);
                    axpy(ds, lc.q.row(i) + off, dk.row(j) + off, dh);
                }
            }
        }

        Matrix du1(n, d);
        for (int i = 0; i < n; ++i) {
            add_outer(lg.wq, dq.row(i), lc.u1.row(i));
            add_outer(lg.wk, dk.row(i), lc.u1.row(i));
            add_outer(lg.wv, dv.row(i), lc.u1.row(i));
            axpy(1.0, dq.row(i), lg.bq.row(0), d);
            axpy(1.0, dk.row(i), lg.bk.row(0), d);
            axpy(1.0, dv.row(i), lg.bv.row(0), d);
            matvec_t_add(lp.wq, dq.row(i), du1.row(i));
            matvec_t_add(lp.wk, dk.row(i), du1.row(i));
            matvec_t_add(lp.wv, dv.row(i), du1.row(i));
        }
        Matrix dx_in = dx_mid;  // residual path
        layer_norm_backward_rows(lc.x_in, lp.ln1_gain, lc.ln1_mean, lc.ln1_istd, du1, dx_in,
                                 lg.ln1_gain, lg.ln1_bias);
        dx = std::move(dx_in);
    }

    // embedding gradients
    if (cc.used_empty_token) {
        axpy(1.0, dx.row(0), grads.empty_token.row(0), d);
        return;
    }
    int ht = params.cve_t.hidden();
    int hv = params.cve_v.hidden();
    std::vector<double> dh_t(size_t(std::max(ht, hv)), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* de = dx.row(i);
        const auto& obs = cc.window[size_t(i)];
        axpy(1.0, de, grads.feature_table.row(obs.code), d);

        // CVE-t
        const double* hid = cc.hidden_t.row(i);
        axpy(1.0, de, grads.cve_t.b2.row(0), d);
        add_outer(grads.cve_t.w2, de, hid);
        std::fill(dh_t.begin(), dh_t.begin() + ht, 0.0);
        matvec_t_add(params.cve_t.w2, de, dh_t.data());
        for (int j = 0; j < ht; ++j) {
            double dp = dh_t[size_t(j)] * (1.0 - hid[j] * hid[j]);
            grads.cve_t.b1(0, j) += dp;
            grads.cve_t.w1(j, 0) += dp * obs.t;
        }

        // CVE-v
        hid = cc.hidden_v.row(i);
        axpy(1.0, de, grads.cve_v.b2.row(0), d);
        add_outer(grads.cve_v.w2, de, hid);
        std::fill(dh_t.begin(), dh_t.begin() + hv, 0.0);
        matvec_t_add(params.cve_v.w2, de, dh_t.data());
        for (int j = 0; j < hv; ++j) {
            double dp = dh_t[size_t(j)] * (1.0 - hid[j] * hid[j]);
            grads.cve_v.b1(0, j) += dp;
            grads.cve_v.w1(j, 0) += dp * obs.value;
        }
    }
}

std::vector<double> class_weights_from_labels(std::span<const int> labels, int n_classes,
                                              double cap) {
    std::vector<double> counts(size_t(n_classes), 0.0);
    for (int y : labels) {
        if (y < 0 || y >= n_classes) throw DataError("label out of class range");
        counts[size_t(y)] += 1.0;
    }
    std::vector<double> weights(size_t(n_classes), 1.0);
    double total = double(labels.size());
    for (int j = 0; j < n_classes; ++j) {
        if (counts[size_t(j)] <= 0.0) continue;
        double w = total / (double(n_classes) * counts[size_t(j)]);
        weights[size_t(j)] = std::min(w, cap);
    }
    return weights;
}

namespace {

struct AdamState {
    ModelParams m, v;
    int64_t t = 0;
};

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++state.t;
    double c1 = 1.0 - std::pow(b1, double(state.t));
    double c2 = 1.0 - std::pow(b2, double(state.t));
    std::vector<Matrix*> ps, gs, ms, vs;
    params.for_each_tensor([&](const std::string&, Matrix& m) { ps.push_back(&m); });
    const_cast<ModelParams&>(grads).for_each_tensor(
        [&](const std::string&, Matrix& m) { gs.push_back(&m); });
    state.m.for_each_tensor([&](const std::string&, Matrix& m) { ms.push_back(&m); });
    state.v.for_each_tensor([&](const std::string&, Matrix& m) { vs.push_back(&m); });
    for (size_t k = 0; k < ps.size(); ++k) {
        auto& p = ps[k]->a;
        auto& g = gs[k]->a;
        auto& m = ms[k]->a;
        auto& v = vs[k]->a;
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
}

double grad_norm(const ModelParams& grads) {
    double sq = 0.0;
    grads.for_each_tensor([&](const std::string&, const Matrix& m) {
        for (double v : m.a) sq += v * v;
    });
    return std::sqrt(sq);
}

void scale_grads(ModelParams& grads, double s) {
    grads.for_each_tensor([&](const std::string&, Matrix& m) {
        for (double& v : m.a) v *= s;
    });
}

double sample_nll(const std::vector<double>& probs, int label, HeadKind head) {
    if (head == HeadKind::FourClass) return -std::log(probs[size_t(label)]);
    return label ? -std::log(probs[0]) : -std::log(1.0 - probs[0]);
}

// mean one-vs-rest AUROC over the abnormal classes (or plain AUROC for the
// binary head); classes missing either side are skipped
double validation_metric(std::span<const PredictionOutput> preds, std::span<const Sample> samples,
                         HeadKind head) {
    if (head == HeadKind::BinaryDelirium) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (size_t i = 0; i < preds.size(); ++i) {
            scores.push_back(preds[i].probabilities[0]);
            labels.push_back(samples[i].label);
        }
        try {
            return eval::roc_auc(scores, labels);
        } catch (const DataError&) {
            return 0.5;
        }
    }
    double sum = 0.0;
    int used = 0;
    for (int cls = 1; cls < 4; ++cls) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (size_t i = 0; i < preds.size(); ++i) {
            scores.push_back(preds[i].probabilities[size_t(cls)]);
            labels.push_back(samples[i].label == cls ? 1 : 0);
        }
        try {
            sum += eval::roc_auc(scores, labels);
            ++used;
        } catch (const DataError&) {
        }
    }
    return used ? sum / used : 0.5;
}

}  // namespace

TrainResult train(std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const ModelConfig& config, const TrainConfig& tc) {
    config.validate();
    if (train_set.empty() || val_set.empty())
        throw DataError("train: training and validation sets must be non-empty");

    int n_weight_classes = config.head == HeadKind::FourClass ? 4 : 2;
    std::vector<int> train_labels;
    train_labels.reserve(train_set.size());
    for (const auto& s : train_set) train_labels.push_back(s.label);
    std::vector<double> weights =
        class_weights_from_labels(train_labels, n_weight_classes, tc.class_weight_cap);

    Matrix positions;
    if (config.order_positions) {
        int max_len = 1;
        for (const auto& s : train_set) max_len = std::max(max_len, int(s.window->size()));
        for (const auto& s : val_set) max_len = std::max(max_len, int(s.window->size()));
        positions = encoding::sinusoid_positions(max_len, config.embed_dim);
    }
    const Matrix* pos_ptr = config.order_positions ? &positions : nullptr;

    ModelParams params = init_params(config);
    AdamState adam{params.zeros_like(), params.zeros_like(), 0};

    TrainResult result;
    result.best_val_metric = -1.0;
    ModelParams best = params;
    double best_loss = 1e300;

    std::vector<int> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[size_t(i)] = int(i);
    int bad_epochs = 0;

    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        Rng shuffle_rng = Rng::derived(tc.seed, {0xE60C, uint64_t(epoch)});
        shuffle_rng.shuffle(order);
        int n_batches = int((order.size() + size_t(tc.batch_size) - 1) / size_t(tc.batch_size));
        if (tc.max_batches_per_epoch > 0) n_batches = std::min(n_batches, tc.max_batches_per_epoch);

        double epoch_loss = 0.0;
        int64_t seen = 0;
        for (int b = 0; b < n_batches; ++b) {
            int begin = b * tc.batch_size;
            int end = std::min<int>(begin + tc.batch_size, int(order.size()));
            int batch_n = end - begin;
            double inv_batch = 1.0 / double(batch_n);

            std::vector<ModelParams> chunk_grads;
            std::vector<double> chunk_loss(size_t(kGradChunks), 0.0);
            chunk_grads.reserve(kGradChunks);
            for (int ci = 0; ci < kGradChunks; ++ci) chunk_grads.push_back(params.zeros_like());

            parallel_chunks(batch_n, kGradChunks, tc.threads, [&](int chunk, int cb, int ce) {
                ForwardCache cache;
                for (int s = cb; s < ce; ++s) {
                    const Sample& smp = train_set[size_t(order[size_t(begin + s)])];
                    Rng drop_rng = Rng::derived(
                        tc.seed, {0xD409, uint64_t(epoch), uint64_t(begin + s)});
                    PredictionOutput out =
                        forward(*smp.window, *smp.statics, params, config, &cache, pos_ptr,
                                config.dropout > 0.0 ? &drop_rng : nullptr);
                    double w = weights[size_t(smp.label)];
                    chunk_loss[size_t(chunk)] += w * sample_nll(out.probabilities, smp.label,
                                                                config.head);
                    backward(cache, params, config, smp.label, w, inv_batch,
                             chunk_grads[size_t(chunk)]);
                }
            });

            ModelParams& grads = chunk_grads[0];
            for (int ci = 1; ci < kGradChunks; ++ci) {
                std::vector<Matrix*> dst, src;
                grads.for_each_tensor([&](const std::string&, Matrix& m) { dst.push_back(&m); });
                chunk_grads[size_t(ci)].for_each_tensor(
                    [&](const std::string&, Matrix& m) { src.push_back(&m); });
                for (size_t k = 0; k < dst.size(); ++k)
                    for (size_t i = 0; i < dst[k]->a.size(); ++i) dst[k]->a[i] += src[k]->a[i];
            }
            double batch_loss = 0.0;
            for (double cl : chunk_loss) batch_loss += cl;
            batch_loss *= inv_batch;
            if (!std::isfinite(batch_loss))
                throw DataError("training diverged: non-finite loss at epoch " +
                                std::to_string(epoch) + " batch " + std::to_string(b));
            epoch_loss += batch_loss * batch_n;
            seen += batch_n;

            if (tc.grad_clip > 0.0) {
                double norm = grad_norm(grads);
                if (norm > tc.grad_clip) scale_grads(grads, tc.grad_clip / norm);
            }
            adam_step(params, grads, adam, tc.learning_rate);
        }

        std::vector<PredictionOutput> val_preds =
            predict_batch(val_set, params, config, tc.threads);
        double metric = validation_metric(val_preds, val_set, config.head);
        double mean_loss = seen ? epoch_loss / double(seen) : 0.0;
        result.log.push_back({epoch, mean_loss, metric});

        // a metric tie resolves toward the lower training loss so a saturated
        // validation metric still keeps the sharper parameters
        if (metric > result.best_val_metric ||
            (metric == result.best_val_metric && mean_loss < best_loss)) {
            bool improved = metric > result.best_val_metric;
            result.best_val_metric = metric;
            result.best_epoch = epoch;
            best = params;
            best_loss = mean_loss;
            if (improved) bad_epochs = 0;
            else ++bad_epochs;
        } else {
            ++bad_epochs;
        }
        if (bad_epochs >= tc.patience) break;
    }

    result.params = std::move(best);
    return result;
}

std::vector<PredictionOutput> predict_batch(std::span<const Sample> samples,
                                            const ModelParams& params, const ModelConfig& config,
                                            int threads) {
    std::vector<PredictionOutput> out(samples.size());
    if (samples.empty()) return out;
    Matrix positions;
    if (config.order_positions) {
        int max_len = 1;
        for (const auto& s : samples) max_len = std::max(max_len, int(s.window->size()));
        positions = encoding::sinusoid_positions(max_len, config.embed_dim);
    }
    const Matrix* pos_ptr = config.order_positions ? &positions : nullptr;
    parallel_chunks(int(samples.size()), kGradChunks * 4, threads, [&](int, int b, int e) {
        for (int i = b; i < e; ++i)
            out[size_t(i)] = forward(*samples[size_t(i)].window, *samples[size_t(i)].statics,
                                     params, config, nullptr, pos_ptr, nullptr);
    });
    return out;
}

// ---- checkpoint serialization ----

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["embed_dim"] = c.embed_dim;
    j["layers"] = c.layers;
    j["heads"] = c.heads;
    j["ffn_hidden"] = c.ffn_hidden;
    j["static_embed"] = c.static_embed;
    j["attention"] = c.attention == AttentionVariant::Full ? "full" : "sliding_window_global";
    j["attn_window"] = c.attn_window;
    j["attn_global"] = c.attn_global;
    j["order_positions"] = c.order_positions;
    j["head"] = c.head == HeadKind::FourClass ? "four_class" : "binary_delirium";
    j["dropout"] = c.dropout;
    j["seed"] = c.seed;
    j["max_seq"] = c.max_seq;
    j["vocab_size"] = c.vocab_size;
    j["static_dim"] = c.static_dim;
    return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_hidden = j.at("ffn_hidden").get<int>();
    c.static_embed = j.at("static_embed").get<int>();
    std::string attn = j.at("attention").get<std::string>();
    if (attn == "full") c.attention = AttentionVariant::Full;
    else if (attn == "sliding_window_global") c.attention = AttentionVariant::SlidingWindowGlobal;
    else throw DataError("checkpoint: unknown attention variant '" + attn + "'");
    c.attn_window = j.at("attn_window").get<int>();
    c.attn_global = j.at("attn_global").get<int>();
    c.order_positions = j.at("order_positions").get<bool>();
    std::string head = j.at("head").get<std::string>();
    if (head == "four_class") c.head = HeadKind::FourClass;
    else if (head == "binary_delirium") c.head = HeadKind::BinaryDelirium;
    else throw DataError("checkpoint: unknown head kind '" + head + "'");
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.max_seq = j.at("max_seq").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.static_dim = j.at("static_dim").get<int>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["tool_version"] = kToolVersion;
    j["config"] = config_to_json(ck.config);
    j["vocab_hash"] = ck.vocab_hash;
    j["seed"] = ck.seed;
    nlohmann::ordered_json tensors;
    ck.params.for_each_tensor([&](const std::string& name, const Matrix& m) {
        nlohmann::ordered_json t;
        t["rows"] = m.rows;
        t["cols"] = m.cols;
        t["data"] = m.a;
        tensors[name] = std::move(t);
    });
    j["tensors"] = std::move(tensors);
    std::ofstream out(path);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out << j.dump() << '\n';
    out.close();
    if (out.fail()) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<std::string>& expected_vocab_hash) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("format_version").get<int>() != 1)
        throw DataError("unsupported checkpoint format version");
    Checkpoint ck;
    ck.config = config_from_json(j.at("config"));
    ck.vocab_hash = j.at("vocab_hash").get<std::string>();
    ck.seed = j.at("seed").get<uint64_t>();
    if (expected_vocab_hash && *expected_vocab_hash != ck.vocab_hash)
        throw DataError("checkpoint vocabulary hash " + ck.vocab_hash +
                        " does not match dataset vocabulary hash " + *expected_vocab_hash);
    ck.params = init_params(ck.config);
    const auto& tensors = j.at("tensors");
    ck.params.for_each_tensor([&](const std::string& name, Matrix& m) {
        const auto& t = tensors.at(name);
        if (t.at("rows").get<int>() != m.rows || t.at("cols").get<int>() != m.cols)
            throw DataError("checkpoint tensor '" + name + "' has unexpected shape");
        std::vector<double> data = t.at("data").get<std::vector<double>>();
        if (data.size() != m.a.size())
            throw DataError("checkpoint tensor '" + name + "' has unexpected size");
        m.a = std::move(data);
    });
    if (!ck.params.finite()) throw DataError("checkpoint contains non-finite values");
    return ck;
}

}  // namespace acuity::model
