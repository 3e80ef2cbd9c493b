#include "haar/param_vector.hpp"

#include <cmath>

#include "haar/common.hpp"

namespace haar {

std::size_t ParamVector::add_segment(std::string name, std::size_t length, double fill) {
  if (has_segment(name)) throw std::invalid_argument("duplicate segment name: " + name);
  const std::size_t offset = values_.size();
  values_.resize(offset + length, fill);
  layout_.push_back({std::move(name), offset, length});
  return offset;
}

const Segment* ParamVector::find(std::string_view name) const {
  for (const auto& s : layout_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const Segment& ParamVector::segment_info(std::string_view name) const {
  const Segment* s = find(name);
  if (!s) throw std::out_of_range("no segment named " + std::string(name));
  return *s;
}

std::span<double> ParamVector::segment(std::string_view name) {
  const Segment& s = segment_info(name);
  return std::span<double>(values_).subspan(s.offset, s.length);
}

std::span<const double> ParamVector::segment(std::string_view name) const {
  const Segment& s = segment_info(name);
  return std::span<const double>(values_).subspan(s.offset, s.length);
}

ParamVector ParamVector::zeros_like() const {
  ParamVector z = *this;
  z.fill(0.0);
  return z;
}

void ParamVector::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

ParamVector& ParamVector::axpy(double alpha, const ParamVector& x) {
  if (x.size() != size()) throw ShapeError("axpy: parameter vector sizes differ");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += alpha * x.values_[i];
  return *this;
}

double ParamVector::dot(const ParamVector& other) const {
  if (other.size() != size()) throw ShapeError("dot: parameter vector sizes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * other.values_[i];
  return acc;
}

bool ParamVector::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void ParamVector::check_finite(std::string_view context) const {
  for (const auto& s : layout_) {
    for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
      if (!std::isfinite(values_[i])) {
        throw NumericError(std::string(context) + ": non-finite value in segment " + s.name);
      }
    }
  }
}

void append_prefixed(ParamVector& dst, const ParamVector& src, std::string_view prefix) {
  for (const auto& s : src.layout()) {
    dst.add_segment(std::string(prefix) + s.name, s.length);
    auto from = src.segment(s.name);
    auto to = dst.segment(std::string(prefix) + s.name);
    std::copy(from.begin(), from.end(), to.begin());
  }
}

ParamVector extract_prefixed(const ParamVector& src, std::string_view prefix) {
  ParamVector out;
  for (const auto& s : src.layout()) {
    if (!s.name.starts_with(prefix)) continue;
    std::string local = s.name.substr(prefix.size());
    out.add_segment(local, s.length);
    auto from = src.segment(s.name);
    auto to = out.segment(local);
    std::copy(from.begin(), from.end(), to.begin());
  }
  return out;
}

}  // namespace haar
