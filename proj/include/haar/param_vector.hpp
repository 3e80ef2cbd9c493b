#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace haar {

/// Cache-line aligned allocator. Vectorized kernels pick their loop peeling
/// from the data address, so a fixed alignment keeps results bit-reproducible.
template <class T>
struct CacheAlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  CacheAlignedAllocator() = default;
  template <class U>
  CacheAlignedAllocator(const CacheAlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const CacheAlignedAllocator<U>&) const noexcept {
    return true;
  }
};

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

/// Flat parameter storage with a named, contiguous segment layout.
///
/// Every differentiable model keeps its weights in one ParamVector so that
/// optimizers, gradients and checkpoints all operate on the same flat view.
/// Segments are appended in order, so offsets are contiguous and cover the
/// whole vector by construction.
class ParamVector {
 public:
  ParamVector() = default;

  /// Appends a segment and returns its offset. Names must be unique.
  std::size_t add_segment(std::string name, std::size_t length, double fill = 0.0);

  const Segment* find(std::string_view name) const;
  bool has_segment(std::string_view name) const { return find(name) != nullptr; }
  const Segment& segment_info(std::string_view name) const;

  std::span<double> segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::size_t size() const { return values_.size(); }
  const std::vector<Segment>& layout() const { return layout_; }

  Eigen::Map<Eigen::VectorXd> vec() { return {values_.data(), static_cast<Eigen::Index>(values_.size())}; }
  Eigen::Map<const Eigen::VectorXd> vec() const {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }

  /// Same segments (names, offsets, lengths) in the same order.
  bool same_layout(const ParamVector& other) const { return layout_ == other.layout_; }

  /// A zero vector with this layout.
  ParamVector zeros_like() const;

  void fill(double v);
  ParamVector& axpy(double alpha, const ParamVector& x);
  double dot(const ParamVector& other) const;
  bool all_finite() const;
  /// Throws NumericError naming the first segment holding a non-finite value.
  void check_finite(std::string_view context) const;

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double, CacheAlignedAllocator<double>> values_;
  std::vector<Segment> layout_;
};

/// Copies every segment of `src` into `dst` under `prefix + name`.
void append_prefixed(ParamVector& dst, const ParamVector& src, std::string_view prefix);

/// Collects segments whose names start with `prefix`, stripping it.
ParamVector extract_prefixed(const ParamVector& src, std::string_view prefix);

}  // namespace haar
