#ifndef DETRACK_UTIL_HPP_
#define DETRACK_UTIL_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

namespace detrack {

// Worker cap for parallel sections: DETRACK_THREADS if set (>= 1), otherwise
// hardware concurrency.
int max_threads();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks across at
// most max_threads() workers; with one worker it degenerates to a plain loop.
void parallel_for(int n, const std::function<void(int)>& fn);

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Content hash of a file, rendered as 16 hex digits.
std::string hash_file(const std::filesystem::path& p);

std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& contents);

}  // namespace detrack

#endif  // DETRACK_UTIL_HPP_
