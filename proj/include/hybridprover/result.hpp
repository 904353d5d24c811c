#pragma once

#include <stdexcept>
#include <type_traits>
#include <utility>
#include <variant>

namespace hybridprover {

template <class E>
struct Unexpected {
  E error;
};

template <class E>
Unexpected<std::decay_t<E>> unexpected(E&& e) {
  return {std::forward<E>(e)};
}

/// Value-or-error return type. Holds either a T or an E; never both.
template <class T, class E>
class Result {
 public:
  Result(T value) : v_(std::in_place_index<0>, std::move(value)) {}
  Result(Unexpected<E> err) : v_(std::in_place_index<1>, std::move(err.error)) {}
  template <class G, class = std::enable_if_t<!std::is_same_v<G, E> && std::is_constructible_v<E, G>>>
  Result(Unexpected<G> err) : v_(std::in_place_index<1>, E(std::move(err.error))) {}

  bool has_value() const noexcept { return v_.index() == 0; }
  explicit operator bool() const noexcept { return has_value(); }

  T& value() & {
    if (!has_value()) throw std::logic_error("Result::value() on error");
    return std::get<0>(v_);
  }
  const T& value() const& {
    if (!has_value()) throw std::logic_error("Result::value() on error");
    return std::get<0>(v_);
  }
  T&& value() && {
    if (!has_value()) throw std::logic_error("Result::value() on error");
    return std::get<0>(std::move(v_));
  }
  const E& error() const& {
    if (has_value()) throw std::logic_error("Result::error() on value");
    return std::get<1>(v_);
  }

  T& operator*() & { return value(); }
  const T& operator*() const& { return value(); }
  T* operator->() { return &value(); }
  const T* operator->() const { return &value(); }

 private:
  std::variant<T, E> v_;
};

}  // namespace hybridprover
