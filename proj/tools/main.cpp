#include "efft/cli.hpp"

int main(int argc, char** argv) {
    return efft::cli_main(argc, argv);
}
