// Op-count and timing sweep behind `hp bench`.

#ifndef HP_TOOLS_BENCH_HPP
#define HP_TOOLS_BENCH_HPP

#include <cstddef>
#include <iosfwd>

namespace hp::tools {

/// Prints the sweep table and the scaling summary; false when a scaling check fails.
bool run_bench(std::ostream& out, std::size_t pairs);

}  // namespace hp::tools

#endif  // HP_TOOLS_BENCH_HPP
