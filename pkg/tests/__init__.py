import os

# tests must not pick up a developer's config.yaml
os.environ.setdefault('IGNORE_CONFIG_FILE', 'true')
