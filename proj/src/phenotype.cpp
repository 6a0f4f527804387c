#include "acuity/phenotype.hpp"

#include <cmath>

#include "acuity/util.hpp"

namespace acuity::phenotype {

std::string label_name(AcuityLabel label) {
    switch (label) {
        case AcuityLabel::Normal: return "normal";
        case AcuityLabel::Delirium: return "delirium";
        case AcuityLabel::Coma: return "coma";
        case AcuityLabel::Dead: return "dead";
        case AcuityLabel::Excluded: return "excluded";
    }
    throw DataError("invalid acuity label value");
}

AcuityLabel label_from_name(const std::string& name) {
    if (name == "normal") return AcuityLabel::Normal;
    if (name == "delirium") return AcuityLabel::Delirium;
    if (name == "coma") return AcuityLabel::Coma;
    if (name == "dead") return AcuityLabel::Dead;
    if (name == "excluded") return AcuityLabel::Excluded;
    throw DataError("unknown acuity label '" + name + "'");
}

void validate_score(const TimedScore& score) {
    if (score.time_min < 0.0 || !std::isfinite(score.time_min))
        throw DataError("score time must be finite and non-negative");
    switch (score.kind) {
        case ScoreKind::Rass:
            if (score.value < -5 || score.value > 4 || score.value != std::floor(score.value))
                throw DataError("RASS value must be an integer in [-5, 4]");
            break;
        case ScoreKind::Cam:
            if (score.value != 0.0 && score.value != 1.0)
                throw DataError("CAM value must be 0 (negative) or 1 (positive)");
            break;
        case ScoreKind::Gcs:
            if (score.value < 3 || score.value > 15 || score.value != std::floor(score.value))
                throw DataError("GCS value must be an integer in [3, 15]");
            break;
    }
}

std::optional<double> carry_forward(const std::vector<TimedScore>& scores, ScoreKind kind,
                                    double query_time_min) {
    const TimedScore* latest = nullptr;
    double prev_time = -1.0;
    for (const auto& s : scores) {
        if (s.time_min < prev_time)
            throw std::invalid_argument("carry_forward: scores must be sorted by time");
        prev_time = s.time_min;
        if (s.kind != kind) continue;
        if (s.time_min > query_time_min) break;
        latest = &s;
    }
    if (!latest) return std::nullopt;
    if (query_time_min - latest->time_min > kCarryForwardHorizonMin) return std::nullopt;
    return latest->value;
}

ScoreSnapshot snapshot_at(const std::vector<TimedScore>& scores, double query_time_min,
                          bool died_in_shift) {
    ScoreSnapshot snap;
    snap.died_in_shift = died_in_shift;
    if (auto v = carry_forward(scores, ScoreKind::Rass, query_time_min)) snap.rass = int(*v);
    if (auto v = carry_forward(scores, ScoreKind::Cam, query_time_min))
        snap.cam = (*v != 0.0) ? Cam::Positive : Cam::Negative;
    if (auto v = carry_forward(scores, ScoreKind::Gcs, query_time_min)) snap.gcs = int(*v);
    return snap;
}

static void validate_snapshot(const ScoreSnapshot& s) {
    if (s.rass && (*s.rass < -5 || *s.rass > 4))
        throw DataError("snapshot RASS out of range [-5, 4]");
    if (s.gcs && (*s.gcs < 3 || *s.gcs > 15))
        throw DataError("snapshot GCS out of range [3, 15]");
}

AcuityLabel label_shift(const ScoreSnapshot& s) {
    validate_snapshot(s);
    if (s.died_in_shift) return AcuityLabel::Dead;
    if (!s.rass && !s.cam && !s.gcs) return AcuityLabel::Excluded;

    if (s.rass) {
        if (*s.rass < -3) return AcuityLabel::Coma;
        if (*s.rass == -3) {
            // GCS breaks the coma/delirium tie; absent GCS stays on the coma side
            if (s.gcs && *s.gcs > 8) return AcuityLabel::Delirium;
            return AcuityLabel::Coma;
        }
        // RASS > -3
        if (s.cam)
            return *s.cam == Cam::Positive ? AcuityLabel::Delirium : AcuityLabel::Normal;
        if (s.gcs && *s.gcs <= 8) return AcuityLabel::Coma;
        return AcuityLabel::Normal;
    }

    // RASS missing
    if (s.gcs && *s.gcs <= 8) return AcuityLabel::Coma;
    if (s.cam) return *s.cam == Cam::Positive ? AcuityLabel::Delirium : AcuityLabel::Normal;
    return AcuityLabel::Normal;  // GCS present and > 8
}

std::vector<ShiftSpan> make_shift_spans(double admit_min, double discharge_min,
                                        std::optional<double> death_min,
                                        double anchor_offset_min) {
    if (!(admit_min < discharge_min))
        throw DataError("stay admit time must precede discharge time");
    // first grid point at or after admission; grid points sit at
    // anchor_offset and anchor_offset+720 of every day
    double rel = admit_min - anchor_offset_min;
    double start = anchor_offset_min + std::ceil(rel / 720.0) * 720.0;
    std::vector<ShiftSpan> spans;
    for (; start < discharge_min; start += 720.0) {
        spans.push_back({start, start + 720.0});
        if (death_min && *death_min >= start && *death_min < start + 720.0) break;
    }
    return spans;
}

std::vector<ShiftLabel> label_stay(const std::vector<TimedScore>& scores,
                                   const std::vector<ShiftSpan>& spans,
                                   std::optional<double> death_min) {
    for (size_t i = 0; i < spans.size(); ++i) {
        if (spans[i].end_min - spans[i].start_min != 720.0)
            throw DataError("shift span must be exactly 720 minutes");
        if (i > 0 && spans[i].start_min < spans[i - 1].end_min)
            throw DataError("shift spans overlap or are out of order");
    }
    std::vector<ShiftLabel> out;
    out.reserve(spans.size());
    for (size_t i = 0; i < spans.size(); ++i) {
        const auto& span = spans[i];
        bool died = death_min && *death_min >= span.start_min && *death_min < span.end_min;
        ScoreSnapshot snap = snapshot_at(scores, span.end_min, died);
        out.push_back({int(i), label_shift(snap)});
        if (died) break;  // later shifts do not exist for this stay
    }
    return out;
}

}  // namespace acuity::phenotype
