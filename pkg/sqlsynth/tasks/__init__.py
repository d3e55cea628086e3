# Pipeline stage runners
