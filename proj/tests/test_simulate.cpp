#include <doctest.h>

TEST_SUITE_BEGIN("simulate");
TEST_SUITE_END();
