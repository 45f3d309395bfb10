#include "memmeter/cli/app.hpp"

int main(int argc, char** argv) { return memmeter::cli::run(argc, argv); }
