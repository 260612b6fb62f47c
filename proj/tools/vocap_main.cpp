#include <iostream>

int main() {
  std::cout << "vocap: subcommands pending\n";
  return 0;
}
