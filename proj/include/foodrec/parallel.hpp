#ifndef FOODREC_PARALLEL_HPP
#define FOODREC_PARALLEL_HPP

#include <cstdint>
#include <functional>

namespace foodrec::par {

/// 0 means auto (hardware concurrency). Affects parallel_for only.
void set_threads(int n);
int threads();

/// Runs fn over [0, n) in contiguous chunks, one per worker. Workers must
/// only write to disjoint, index-owned data; under that rule results are
/// identical for any thread count. Exceptions propagate to the caller.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

} // namespace foodrec::par

#endif
