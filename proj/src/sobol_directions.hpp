// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_SRC_SOBOL_DIRECTIONS_HPP
#define GOLA_SRC_SOBOL_DIRECTIONS_HPP

#include <array>
#include <cstddef>

namespace gola::detail {

struct SobolDirection {
  unsigned polynomial;
  std::array<unsigned, 9> m_init;
};

// Dimension 1 uses the van der Corput sequence; these cover dimensions 2..64.
inline constexpr std::size_t kSobolTableSize = 63;

extern const std::array<SobolDirection, kSobolTableSize> kSobolDirections;

}  // namespace gola::detail

#endif  // GOLA_SRC_SOBOL_DIRECTIONS_HPP
