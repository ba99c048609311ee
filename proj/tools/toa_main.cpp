#include <malloc.h>

#include <iostream>

#include "toa/cli.hpp"

int main(int argc, char** argv) {
  // Large temporaries are reused every step; keep them out of mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
  return toa::cli::run(argc, argv, std::cout, std::cerr);
}
