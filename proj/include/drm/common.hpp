#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace drm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (parse failures, invariant
/// violations in files, missing cells).
class DataError : public Error {
public:
  using Error::Error;
};

/// The sampler could not produce a usable posterior.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

/// Number of worker threads: DRM_THREADS if set and positive, else the
/// hardware concurrency (at least 1).
std::size_t default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers. Work items are
/// claimed dynamically; callers write results by index so output order never
/// depends on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t threads = default_thread_count());

/// Shortest round-trip decimal representation of a double.
std::string format_double(double value);

/// Writes `contents` to `path` through a temporary file and a rename, so
/// readers never observe a partially written file.
void write_file_atomic(const std::string& path, std::string_view contents);

std::string read_file(const std::string& path);

}  // namespace drm
