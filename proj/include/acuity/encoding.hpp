#pragma once

#include <span>

#include "acuity/linalg.hpp"
#include "acuity/util.hpp"

namespace acuity::encoding {

// One temporal EHR event ready for embedding: time normalized to [0, 1]
// within its 720-minute window, variable code into the feature vocabulary,
// standardized value.
struct ObservationTriplet {
    double t = 0.0;
    int code = 0;
    double value = 0.0;
};

// One-to-many network mapping a scalar to a d-vector:
// out = w2 · tanh(w1 · x + b1) + b2, hidden size ceil(sqrt(d)).
struct CveParams {
    Matrix w1;  // h×1
    Matrix b1;  // 1×h
    Matrix w2;  // d×h
    Matrix b2;  // 1×d
    int hidden() const { return w1.rows; }
    int dim() const { return w2.rows; }
};

CveParams make_cve(int dim, Rng& rng);

// Writes the d-vector for scalar x; optionally captures the tanh hidden
// activations for backprop.
void cve_forward(double x, const CveParams& params, double* out, double* hidden_out = nullptr);

// Fused per-observation embeddings: CVE(t) + CVE(v) + feature_table[code].
// Optional n×h caches collect the CVE hidden activations.
Matrix embed_window(std::span<const ObservationTriplet> window, const CveParams& cve_t,
                    const CveParams& cve_v, const Matrix& feature_table,
                    Matrix* hidden_t = nullptr, Matrix* hidden_v = nullptr);

// Standard interleaved sin/cos table; row 0 is (0, 1, 0, 1, ...).
Matrix sinusoid_positions(int max_positions, int dim);

// Adds position rows in place; used only by the order-aware attention variant.
void add_order_positions(Matrix& sequence, const Matrix& positions);

}  // namespace acuity::encoding
