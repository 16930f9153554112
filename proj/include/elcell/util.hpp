#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace elcell {

// Thrown when an iterative routine fails for numerical reasons (failed
// bracket, divergent iteration, singular system). Distinct from
// std::invalid_argument, which is reserved for caller mistakes.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Least-squares slope of y against x. Used for log-log order fits.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

// Runs fn(i) for i in [0, count) on up to `threads` workers. Falls back to a
// plain loop for threads <= 1. Tasks must be independent; any reduction over
// the results happens after this returns, in index order, so numbers do not
// depend on the worker count.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn);

// FNV-1a, used for config hashes and measurement-noise seed derivation.
std::uint64_t fnv1a(const void* data, std::size_t bytes,
                    std::uint64_t seed = 14695981039346656037ull);
std::uint64_t fnv1a(const std::string& s);

// splitmix64 step; decorrelates seeds derived from hashes.
std::uint64_t splitmix64(std::uint64_t x);

// Shortest-width decimal that round-trips a double. CSV and report writers
// use this so identical runs produce identical bytes.
std::string format_double(double v);

inline double sqr(double v) { return v * v; }

} // namespace elcell
