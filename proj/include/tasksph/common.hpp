#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tasksph {

template <class T>
struct Vec3 {
  T x{}, y{}, z{};

  constexpr T& operator[](int d) { return d == 0 ? x : (d == 1 ? y : z); }
  constexpr const T& operator[](int d) const { return d == 0 ? x : (d == 1 ? y : z); }

  constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  constexpr Vec3& operator*=(T s) { x *= s; y *= s; z *= s; return *this; }

  template <class U>
  constexpr Vec3<U> as() const { return {U(x), U(y), U(z)}; }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, T s) { return a *= s; }
  friend constexpr Vec3 operator*(T s, Vec3 a) { return a *= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

using Vec3f = Vec3<float>;
using Vec3d = Vec3<double>;

template <class T>
constexpr T dot(const Vec3<T>& a, const Vec3<T>& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

template <class T>
constexpr Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <class T>
constexpr T norm2(const Vec3<T>& a) { return dot(a, a); }

template <class T>
T norm(const Vec3<T>& a) { return std::sqrt(norm2(a)); }

// Error taxonomy; the CLI maps exit_code() straight to the process status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 3; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 1; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

enum class LoopKind : std::uint8_t { density = 0, gradient = 1, force = 2 };
inline constexpr int kNumLoops = 3;

const char* to_string(LoopKind k);

}  // namespace tasksph
