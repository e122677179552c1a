#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace cdl {

// Chunked parallel loop. Chunk boundaries depend only on (n, chunk), never on
// the thread count, so per-chunk partial results combined in chunk order give
// bit-identical reductions at any thread count.
//
// fn(chunk_index, begin, end) must write only to state owned by its chunk.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t chunk, int threads, Fn&& fn) {
  if (n == 0) return;
  if (chunk == 0) chunk = 1;
  const std::size_t num_chunks = (n + chunk - 1) / chunk;
  if (threads <= 1 || num_chunks == 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) {
      fn(c, c * chunk, std::min(n, (c + 1) * chunk));
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= num_chunks) return;
      fn(c, c * chunk, std::min(n, (c + 1) * chunk));
    }
  };
  const int nw = std::min<std::size_t>(static_cast<std::size_t>(threads), num_chunks);
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

// Deterministic sum over n items: per-chunk accumulators combined in order.
template <typename Fn>
double parallel_sum(std::size_t n, std::size_t chunk, int threads, Fn&& term) {
  if (n == 0) return 0.0;
  if (chunk == 0) chunk = 1;
  const std::size_t num_chunks = (n + chunk - 1) / chunk;
  std::vector<double> partial(num_chunks, 0.0);
  parallel_chunks(n, chunk, threads, [&](std::size_t c, std::size_t b, std::size_t e) {
    double acc = 0.0;
    for (std::size_t i = b; i < e; ++i) acc += term(i);
    partial[c] = acc;
  });
  double total = 0.0;
  for (double v : partial) total += v;
  return total;
}

}  // namespace cdl
