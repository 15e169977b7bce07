#include <string>
#include <vector>

#include "loralab/cli.hpp"

int main(int argc, char** argv) {
    return loralab::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
