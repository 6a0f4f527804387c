#pragma once

#include <cstdint>
#include <string>

namespace acuity {

// Naive wall-clock times at minute resolution, counted from 1970-01-01T00:00.
// No time zones: all timestamps in one dataset share one local clock.

int64_t days_from_civil(int y, int m, int d);
void civil_from_days(int64_t z, int& y, int& m, int& d);

// Accepts YYYY-MM-DDTHH:MM and YYYY-MM-DDTHH:MM:SS (seconds floored away).
int64_t parse_iso8601_min(const std::string& s);
std::string format_iso8601_min(int64_t minutes);

}  // namespace acuity
