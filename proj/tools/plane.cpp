#include "plane/cli/app.hpp"

int main(int argc, char** argv) { return plane::cli::run(argc, argv); }
