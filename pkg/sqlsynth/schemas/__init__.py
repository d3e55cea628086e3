# Pydantic models for every artifact the toolkit reads or writes
