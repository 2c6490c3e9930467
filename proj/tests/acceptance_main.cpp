// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Filled in with the full criterion set; placeholder while modules land.

#include <cstdio>

int main() {
  std::puts("acceptance suite not yet wired");
  return 1;
}
