#include <pybind11/pybind11.h>

#include "seedflood/rng.hpp"

namespace py = pybind11;

PYBIND11_MODULE(_seedflood, m) {
  m.doc() = "Decentralized zeroth-order training simulator";
}
