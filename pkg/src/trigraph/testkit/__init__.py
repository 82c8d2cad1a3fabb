"""Reference oracles and seeded fixture generators."""
