#include "tcri/harness.hpp"

int main(int argc, char** argv) { return tcri::harness::cli_main(argc, argv); }
