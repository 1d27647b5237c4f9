#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>

#include "stabsel/online.hpp"

namespace stabsel {

/// Fixed 12-significant-digit rendering used by every emitted file.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Semicolon-joined list, so it fits in one CSV cell.
inline std::string fmt_list(std::span<const double> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    out += fmt_double(v[i]);
  }
  return out;
}

inline constexpr const char* kTraceHeader =
    "seed,t,coma_covered,coma_length,coma_beta,coma_weights,adacoma_chosen,adacoma_covered,adacoma_length,"
    "adacoma_comb_covered,adacoma_comb_length,adacoma_beta,adacoma_weights,adacoma_p";

inline void write_trace_rows(std::ostream& os, std::uint64_t seed, std::span<const OnlineStepRecord> records) {
  for (const auto& r : records) {
    os << seed << ',' << r.t << ',' << int(r.coma_covered) << ',' << fmt_double(r.coma_length) << ','
       << fmt_double(r.coma_beta) << ',' << fmt_list(r.coma_weights) << ',' << r.ada_chosen << ','
       << int(r.ada_covered) << ',' << fmt_double(r.ada_length) << ',' << int(r.ada_comb_covered) << ','
       << fmt_double(r.ada_comb_length) << ',' << fmt_double(r.ada_beta) << ',' << fmt_list(r.ada_weights) << ','
       << fmt_list(r.ada_p) << '\n';
  }
}

}  // namespace stabsel
