#pragma once

// Bounded fan-out of independent tasks with first-success cancellation.

#include <algorithm>
#include <cstddef>
#include <mutex>
#include <optional>
#include <stop_token>
#include <thread>
#include <vector>

namespace hybridprover::parallel {

enum class Mode {
  All,           // run every task
  Any,           // stop at the first success to finish
  FirstInOrder,  // the lowest-index success wins; tasks above it are cancelled
};

template <class R>
struct Outcome {
  std::vector<std::optional<R>> results;  // empty slot: never started
  std::optional<std::size_t> winner;
  std::optional<std::size_t> aborted_by;  // task whose result aborted the run
  std::size_t started = 0;
};

/// Runs task(i, stop) for i in [0, count) on up to `workers` threads. Tasks
/// are started in index order; once the run is decided no new task starts and
/// in-flight tasks that can no longer matter see their stop token fire. A
/// result for which `abort` holds stops everything. Width 1 runs inline.
template <class R, class Task, class Success, class Abort>
Outcome<R> run(std::size_t count, std::size_t workers, Mode mode, Task&& task, Success&& success, Abort&& abort,
               std::stop_token outer = {}) {
  Outcome<R> out;
  out.results.resize(count);
  std::vector<std::stop_source> stops(count);
  std::mutex mu;
  std::size_t next = 0;
  bool closed = false;

  auto close_above = [&](std::size_t w) {
    closed = true;
    for (std::size_t i = w + 1; i < next; ++i) stops[i].request_stop();
  };

  auto worker = [&] {
    for (;;) {
      std::size_t i;
      std::stop_token st;
      {
        std::lock_guard lock(mu);
        if (closed || next >= count || outer.stop_requested()) return;
        i = next++;
        ++out.started;
        st = stops[i].get_token();
      }
      std::stop_callback forward(outer, [&, i] { stops[i].request_stop(); });
      R r = task(i, st);
      std::lock_guard lock(mu);
      const bool ok = success(r);
      const bool bad = abort(r);
      out.results[i] = std::move(r);
      if (bad && !out.aborted_by) {
        out.aborted_by = i;
        closed = true;
        for (std::size_t k = 0; k < next; ++k) stops[k].request_stop();
      } else if (ok && mode == Mode::Any && !out.winner) {
        out.winner = i;
        closed = true;
        for (std::size_t k = 0; k < next; ++k)
          if (k != i) stops[k].request_stop();
      } else if (ok && mode == Mode::FirstInOrder && (!out.winner || i < *out.winner)) {
        out.winner = i;
        close_above(i);
      }
    }
  };

  const std::size_t width = std::min(std::max<std::size_t>(workers, 1), count);
  if (width <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(width);
    for (std::size_t w = 0; w < width; ++w) pool.emplace_back(worker);
  }
  return out;
}

template <class R, class Task, class Success>
Outcome<R> run(std::size_t count, std::size_t workers, Mode mode, Task&& task, Success&& success,
               std::stop_token outer = {}) {
  return run<R>(count, workers, mode, std::forward<Task>(task), std::forward<Success>(success),
                [](const R&) { return false; }, outer);
}

}  // namespace hybridprover::parallel
