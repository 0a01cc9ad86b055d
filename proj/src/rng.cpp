#include "fgfa/rng.hpp"

#include <cmath>
#include <sstream>

#include "fgfa/errors.hpp"

namespace fgfa {

std::uint32_t Rng::uniform_u32(std::uint32_t bound) {
  if (bound == 0) throw ConfigError("uniform_u32: bound must be positive");
  // Rejection sampling over the largest multiple of bound.
  const std::uint32_t limit = UINT32_MAX - UINT32_MAX % bound;
  std::uint32_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % bound;
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw ConfigError("uniform_int: empty range");
  return lo + static_cast<int>(uniform_u32(static_cast<std::uint32_t>(hi - lo) + 1u));
}

double Rng::uniform() {
  // 53 random bits -> [0, 1).
  const std::uint64_t hi = gen_() >> 5;   // 27 bits
  const std::uint64_t lo = gen_() >> 6;   // 26 bits
  return ((hi << 26) | lo) * (1.0 / 9007199254740992.0);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<int> Rng::sample_without_replacement(std::vector<int> pool, int k) {
  if (k < 0) throw ConfigError("sample_without_replacement: k must be >= 0");
  const int n = static_cast<int>(pool.size());
  if (k > n) k = n;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  // Partial Fisher-Yates.
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(uniform_u32(static_cast<std::uint32_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    out.push_back(pool[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << gen_ << " " << (has_spare_ ? 1 : 0) << " ";
  os.precision(17);
  os << spare_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  int flag = 0;
  is >> gen_ >> flag >> spare_;
  if (!is) throw ConfigError("Rng::set_state: malformed state string");
  has_spare_ = flag != 0;
}

}  // namespace fgfa
