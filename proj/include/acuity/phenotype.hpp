#pragma once

#include <optional>
#include <string>
#include <vector>

namespace acuity::phenotype {

enum class Cam { Negative = 0, Positive = 1 };

enum class AcuityLabel { Normal = 0, Delirium = 1, Coma = 2, Dead = 3, Excluded = 4 };

inline constexpr int kNumClasses = 4;  // Excluded never reaches a model

std::string label_name(AcuityLabel label);
AcuityLabel label_from_name(const std::string& name);

enum class ScoreKind { Rass = 0, Cam = 1, Gcs = 2 };

// One timed assessment. CAM is carried as 0/1 in `value`.
struct TimedScore {
    double time_min = 0.0;
    ScoreKind kind = ScoreKind::Rass;
    double value = 0.0;
};

// The three assessment scores in effect for one 12-hour shift, after
// carry-forward, plus whether the patient died during the shift.
struct ScoreSnapshot {
    std::optional<int> rass;  // [-5, 4]
    std::optional<Cam> cam;
    std::optional<int> gcs;  // [3, 15]
    bool died_in_shift = false;
};

// A score older than this at the query time no longer carries forward.
inline constexpr double kCarryForwardHorizonMin = 720.0;

void validate_score(const TimedScore& score);

// Most recent score of `kind` at or before `query_time_min`, if its age is
// within the carry-forward horizon (inclusive). Scores must be sorted by time.
std::optional<double> carry_forward(const std::vector<TimedScore>& scores, ScoreKind kind,
                                    double query_time_min);

ScoreSnapshot snapshot_at(const std::vector<TimedScore>& scores, double query_time_min,
                          bool died_in_shift);

// Deterministic brain-acuity label for one shift snapshot.
//
// Precedence: death; all-scores-missing (Excluded); RASS < -3 (Coma);
// RASS missing with GCS <= 8 (Coma); RASS == -3 with GCS as the coma/delirium
// tie-breaker; RASS > -3 with CAM deciding delirium vs normal. When CAM is
// absent where it would decide, GCS <= 8 maps to Coma and anything else to
// Normal.
AcuityLabel label_shift(const ScoreSnapshot& snapshot);

struct ShiftSpan {
    double start_min = 0.0;
    double end_min = 0.0;  // start + 720
};

// 12-hour shift grid anchored at 07:00 / 19:00 local clock (minutes 420 and
// 1140 of each day). Spans start inside [admit, discharge); when a death time
// is present the span containing it is the last one.
std::vector<ShiftSpan> make_shift_spans(double admit_min, double discharge_min,
                                        std::optional<double> death_min,
                                        double anchor_offset_min = 420.0);

struct ShiftLabel {
    int shift_index = 0;
    AcuityLabel label = AcuityLabel::Excluded;
};

// One label per span: carry-forward at the span end, then label_shift.
// Spans must be ascending, non-overlapping 720-minute intervals.
std::vector<ShiftLabel> label_stay(const std::vector<TimedScore>& scores,
                                   const std::vector<ShiftSpan>& spans,
                                   std::optional<double> death_min);

}  // namespace acuity::phenotype
