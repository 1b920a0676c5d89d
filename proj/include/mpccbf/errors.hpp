#pragma once

#include <stdexcept>
#include <string>

namespace mpccbf {

// Ellipse barrier queried at a speed where its axes collapse.
class DegenerateState : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ego vehicle is not inside the control zone of its route.
class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line, int column)
      : std::runtime_error(what + " (line " + std::to_string(line) +
                           ", column " + std::to_string(column) + ")"),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace mpccbf
