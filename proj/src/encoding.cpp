#include "acuity/encoding.hpp"

#include <cmath>

namespace acuity::encoding {

static void init_uniform(Matrix& m, int fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(double(fan_in));
    for (double& v : m.a) v = rng.uniform(-bound, bound);
}

CveParams make_cve(int dim, Rng& rng) {
    int hidden = int(std::ceil(std::sqrt(double(dim))));
    CveParams p;
    p.w1 = Matrix(hidden, 1);
    p.b1 = Matrix(1, hidden);
    p.w2 = Matrix(dim, hidden);
    p.b2 = Matrix(1, dim);
    init_uniform(p.w1, 1, rng);
    init_uniform(p.b1, 1, rng);
    init_uniform(p.w2, hidden, rng);
    init_uniform(p.b2, hidden, rng);
    return p;
}

void cve_forward(double x, const CveParams& params, double* out, double* hidden_out) {
    if (!std::isfinite(x)) throw DataError("cve_forward: input is not finite");
    int h = params.hidden();
    int d = params.dim();
    double hidden[64];
    std::vector<double> hidden_big;
    double* hp = hidden_out ? hidden_out : hidden;
    if (!hidden_out && h > 64) {
        hidden_big.resize(size_t(h));
        hp = hidden_big.data();
    }
    for (int i = 0; i < h; ++i) hp[i] = std::tanh(params.w1(i, 0) * x + params.b1(0, i));
    for (int j = 0; j < d; ++j) {
        const double* w2r = params.w2.row(j);
        double acc = params.b2(0, j);
        for (int i = 0; i < h; ++i) acc += w2r[i] * hp[i];
        out[j] = acc;
    }
}

Matrix embed_window(std::span<const ObservationTriplet> window, const CveParams& cve_t,
                    const CveParams& cve_v, const Matrix& feature_table, Matrix* hidden_t,
                    Matrix* hidden_v) {
    int n = int(window.size());
    int d = cve_t.dim();
    Matrix e(n, d);
    if (hidden_t) *hidden_t = Matrix(n, cve_t.hidden());
    if (hidden_v) *hidden_v = Matrix(n, cve_v.hidden());
    std::vector<double> tmp(size_t(d), 0.0);
    for (int i = 0; i < n; ++i) {
        const auto& obs = window[i];
        if (obs.code < 0 || obs.code >= feature_table.rows)
            throw DataError("embed_window: variable code " + std::to_string(obs.code) +
                            " outside vocabulary of size " + std::to_string(feature_table.rows));
        double* row = e.row(i);
        cve_forward(obs.t, cve_t, row, hidden_t ? hidden_t->row(i) : nullptr);
        cve_forward(obs.value, cve_v, tmp.data(), hidden_v ? hidden_v->row(i) : nullptr);
        const double* feat = feature_table.row(obs.code);
        for (int j = 0; j < d; ++j) row[j] += tmp[j] + feat[j];
    }
    return e;
}

Matrix sinusoid_positions(int max_positions, int dim) {
    Matrix p(max_positions, dim);
    for (int pos = 0; pos < max_positions; ++pos) {
        for (int j = 0; j < dim; j += 2) {
            double rate = std::pow(10000.0, -double(j) / double(dim));
            p(pos, j) = std::sin(pos * rate);
            if (j + 1 < dim) p(pos, j + 1) = std::cos(pos * rate);
        }
    }
    return p;
}

void add_order_positions(Matrix& sequence, const Matrix& positions) {
    if (sequence.rows > positions.rows)
        throw DataError("sequence length " + std::to_string(sequence.rows) +
                        " exceeds position table capacity " + std::to_string(positions.rows));
    if (sequence.rows > 0 && sequence.cols != positions.cols)
        throw DataError("position table dimension mismatch");
    for (int i = 0; i < sequence.rows; ++i)
        axpy(1.0, positions.row(i), sequence.row(i), sequence.cols);
}

}  // namespace acuity::encoding
