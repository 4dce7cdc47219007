#pragma once

#include "nekf/dataset.hpp"

#include <string>
#include <vector>

namespace nekf {

enum class FilterKind { LowPass, HighPass };

FilterKind parse_filter_kind(const std::string& name);
std::string to_string(FilterKind k);

/// y = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2) x
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

/// Digital Butterworth cascade obtained from the analog prototype by the
/// bilinear transform with the cutoff prewarped.
std::vector<Biquad> butterworth_sos(FilterKind kind, double cutoff_hz, double rate_hz, int order);

/// Single pass in transposed direct form II. With `steady_state` the
/// section states start at the values a constant input x[0] would settle to.
Vector sos_filter(const std::vector<Biquad>& sos, const Vector& x, bool steady_state);

/// Zero-phase forward-backward filtering with odd-extension padding.
Vector sos_filtfilt(const std::vector<Biquad>& sos, const Vector& x);

/// Zero-phase Butterworth filtering of every input and output channel.
TimeSeriesDataset butterworth_filter(const TimeSeriesDataset& ds, FilterKind kind,
                                     double cutoff_hz, int order = 4);

}  // namespace nekf
