from django.apps import AppConfig


class PoolingConfig(AppConfig):
    name = 'pooling'
    verbose_name = 'Deep token pooling head'
