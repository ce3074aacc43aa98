#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sboxsim {

enum class Transport : std::uint8_t { ProtectedPage, EncryptedUntrusted };

const char* transport_name(Transport t);

struct BenchResult {
  std::size_t chunk_bytes = 0;
  Transport transport = Transport::ProtectedPage;
  std::uint64_t median_ns = 0;
  std::uint64_t p99_ns = 0;
  double throughput_bps = 0.0;
  std::uint64_t iterations = 0;
};

struct BenchReport {
  std::vector<BenchResult> results;  // both transports per size
  std::string host;
  std::string methodology;

  // median_ns(ProtectedPage) subtracted from median_ns(Encrypted).
  std::int64_t latency_gap_ns(std::size_t chunk_bytes) const;
  const BenchResult* find(std::size_t chunk_bytes, Transport t) const;

  std::string to_csv() const;
  std::string to_json() const;
};

struct BenchArgsError {
  std::string reason;
};

inline const std::vector<std::size_t> kDefaultBenchSizes = {
    64, 1024, 16 * 1024, 64 * 1024};

// Times the two channel data paths on the host: page-granular memory copies
// (hardware-shared page) versus AEAD seal/open plus copies (encrypted relay
// through untrusted memory). Throws BenchArgsError on empty sizes, a size
// outside [64B, 64KiB] powers of two, or iters < 1000.
BenchReport bench_channel(const std::vector<std::size_t>& sizes,
                          std::uint64_t iters, std::uint64_t seed);

}  // namespace sboxsim
